//! End-to-end experiment driver: train, evaluate against the exact posterior
//! on measurements never seen in training, and persist the results.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::{stream, EvalSpec, ExperimentConfig};
use crate::harness::metrics::{posterior_distance, psnr};
use crate::harness::report::{emit_report, EvalReport, EvalRow};
use crate::networks::AmortizedPosterior;
use crate::operators::apply_forward_model;
use crate::rng::{derive_seed, SeededRng};
use crate::trainer::{DataSource, TrainState, Trainer};
use crate::vecops;

/// Which signals evaluation measurements are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    /// Signals of the fixed training set (measurement noise is still fresh).
    Train,
    /// Fresh signals from the prior on the held-out stream.
    Heldout,
}

impl EvalSplit {
    fn id_offset(self) -> u64 {
        match self {
            EvalSplit::Train => 0,
            // held-out ids live far above any plausible dataset index
            EvalSplit::Heldout => 1 << 32,
        }
    }

    fn stream_label(self) -> u64 {
        match self {
            EvalSplit::Train => stream::EVAL_TRAIN,
            EvalSplit::Heldout => stream::EVAL_HELDOUT,
        }
    }
}

/// Evaluates the amortized map on `spec.num_measurements` measurements of the
/// chosen split. Each measurement gets its own derived seed, so the result is
/// identical no matter how many worker threads run; the per-row network clone
/// keeps the function-evaluation counter exact.
pub fn evaluate(
    phi: &AmortizedPosterior,
    trainer: &Trainer,
    spec: &EvalSpec,
    base_seed: u64,
    split: EvalSplit,
    peak: f64,
) -> Result<EvalReport> {
    if spec.num_measurements == 0 {
        return Ok(EvalReport::default());
    }
    if spec.samples_per_measurement < 2 {
        return Err(Error::Parameter(
            "eval needs at least 2 samples per measurement".into(),
        ));
    }
    if matches!(split, EvalSplit::Train) && trainer.train_signals.is_empty() {
        return Err(Error::State(
            "train-split evaluation needs a fixed training set".into(),
        ));
    }

    // Training signals carry ids [0, n); held-out ids start at 2^32. The
    // split id sets must never intersect.
    let ids: Vec<u64> = (0..spec.num_measurements as u64)
        .map(|i| split.id_offset() + i)
        .collect();
    if matches!(split, EvalSplit::Heldout) {
        let n_train = trainer.train_signals.len() as u64;
        assert!(
            ids.iter().all(|id| *id >= n_train),
            "held-out ids intersect training ids"
        );
    }

    let rows: Vec<Result<EvalRow>> = ids
        .par_iter()
        .map(|&id| {
            let net = phi.clone();
            let mut rng = SeededRng::new(derive_seed(
                derive_seed(base_seed, split.stream_label()),
                id,
            ));
            let x0 = match split {
                EvalSplit::Train => trainer.train_signals
                    [(id % trainer.train_signals.len() as u64) as usize]
                    .clone(),
                EvalSplit::Heldout => trainer
                    .prior
                    .sample(1, &mut rng)
                    .pop()
                    .expect("one sample requested"),
            };
            let m = apply_forward_model(&trainer.op, &x0, &trainer.noise, &mut rng)?;
            let posterior = trainer.prior.true_posterior(&trainer.op, &m.y, m.sigma_y)?;

            let start = Instant::now();
            let mut samples = Vec::with_capacity(spec.samples_per_measurement);
            for _ in 0..spec.samples_per_measurement {
                let before = net.nfe();
                let s = net.sample(&m, &trainer.op, &trainer.sched, &mut rng)?;
                assert_eq!(net.nfe(), before + 1, "one evaluation per restored sample");
                samples.push(s);
            }
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;

            let dist = posterior_distance(
                &samples,
                &posterior,
                derive_seed(derive_seed(base_seed, stream::POSTERIOR_METRIC), id),
                spec.projections,
            )?;
            let x_mean = vecops::mean(&samples);
            let psnr_db = psnr(&x_mean, &x0, peak)?;
            let residual = samples
                .iter()
                .map(|s| {
                    let hx = trainer.op.apply(s)?;
                    Ok(vecops::sq_norm(&vecops::sub(&m.y, &hx)))
                })
                .sum::<Result<f64>>()?
                / samples.len() as f64;

            for v in [dist.mean_err, dist.std_err, dist.swd, residual] {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite metric on measurement {id}"
                    )));
                }
            }
            Ok(EvalRow {
                meas_id: id,
                mean_err: dist.mean_err,
                std_err: dist.std_err,
                swd: dist.swd,
                psnr: psnr_db,
                residual,
                nfe: 1,
                wall_ms,
            })
        })
        .collect();

    Ok(EvalReport {
        rows: rows.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Everything a finished run leaves behind.
pub struct RunArtifacts {
    pub trainer: Trainer,
    pub state: TrainState,
    pub report: EvalReport,
    pub out_dir: Option<PathBuf>,
}

/// Trains per the config, evaluates on held-out measurements, and when an
/// output directory is configured writes `checkpoint.json`, `metrics.csv`,
/// `report.csv`, `summary.json` and a `config.json` echo.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_experiment_in(cfg, cfg.output_dir.as_ref().map(PathBuf::from).as_deref())
}

pub fn run_experiment_in(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let trainer = cfg.build_trainer()?;
    let state = trainer.run(out_dir)?;

    if let Some(dir) = out_dir {
        trainer
            .checkpoint(&state)
            .save(&dir.join("checkpoint.json"))?;
    }

    let peak = cfg.psnr_peak(&trainer.prior);
    let report = evaluate(
        &state.phi,
        &trainer,
        &cfg.eval,
        cfg.seed,
        EvalSplit::Heldout,
        peak,
    )?;

    if let Some(dir) = out_dir {
        emit_report(&report, dir, cfg)?;
    }
    Ok(RunArtifacts {
        trainer,
        state,
        report,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}

/// Evaluation entry point for a loaded checkpoint: rebuilds the problem from
/// the config and evaluates the restored map on the held-out stream.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    phi: &AmortizedPosterior,
    split: EvalSplit,
) -> Result<EvalReport> {
    cfg.validate()?;
    let trainer = cfg.build_trainer()?;
    let peak = cfg.psnr_peak(&trainer.prior);
    evaluate(phi, &trainer, &cfg.eval, cfg.seed, split, peak)
}

/// Measurement-id disjointness guard used by tests and the self-check: the
/// training dataset indices and held-out measurement ids never intersect.
pub fn split_ids_are_disjoint(trainer: &Trainer, spec: &EvalSpec) -> bool {
    let train_ids: std::collections::BTreeSet<u64> = match trainer.cfg.data_source {
        DataSource::Dataset => (0..trainer.train_signals.len() as u64).collect(),
        DataSource::DaviG => Default::default(),
    };
    let heldout: std::collections::BTreeSet<u64> = (0..spec.num_measurements as u64)
        .map(|i| EvalSplit::Heldout.id_offset() + i)
        .collect();
    train_ids.intersection(&heldout).count() == 0
}
