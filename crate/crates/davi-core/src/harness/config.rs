//! Experiment configuration: JSON schema, validation, and assembly of the
//! training setup. Validation collects every violation before failing so a
//! bad config reports all problems at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::operators::{LiftKind, LinearOperator, NoiseKind, NoiseSpec, OperatorKind};
use crate::ppb::PpbConfig;
use crate::prior::GaussianMixturePrior;
use crate::rng::{derive_seed, SeededRng};
use crate::trainer::{AdamParams, DataSource, NetworkSpec, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub num_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            num_steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

/// Prior given inline or as a CSV path with one component per row:
/// `weight, mean_1..mean_d, var_1..var_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PriorSpec {
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub means: Vec<Vec<f64>>,
    #[serde(default)]
    pub variances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

impl PriorSpec {
    pub fn build(&self, base: &Path) -> Result<GaussianMixturePrior> {
        if let Some(csv) = &self.csv {
            let path = base.join(csv);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let mut weights = Vec::new();
            let mut means = Vec::new();
            let mut variances = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let vals: Vec<f64> = line
                    .split(',')
                    .map(|f| {
                        f.trim()
                            .parse()
                            .map_err(|_| Error::Parameter(format!("bad prior csv field {f:?}")))
                    })
                    .collect::<Result<_>>()?;
                if vals.len() < 3 || vals.len() % 2 == 0 {
                    return Err(Error::Parameter(
                        "prior csv rows must be weight, means..., variances...".into(),
                    ));
                }
                let d = (vals.len() - 1) / 2;
                weights.push(vals[0]);
                means.push(vals[1..1 + d].to_vec());
                variances.push(vals[1 + d..].to_vec());
            }
            GaussianMixturePrior::new(weights, means, variances)
        } else {
            GaussianMixturePrior::new(
                self.weights.clone(),
                self.means.clone(),
                self.variances.clone(),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpecKind {
    Identity {
        dim: usize,
    },
    GaussianBlur {
        dim: usize,
        width: usize,
        std: f64,
    },
    AvgpoolSr {
        dim: usize,
        factor: usize,
    },
    BoxMask {
        dim: usize,
        hide_start: usize,
        hide_len: usize,
    },
    Grayscale {
        channels: usize,
        pixels: usize,
    },
    Dense {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix_csv: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(flatten)]
    pub kind: OperatorSpecKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift: Option<LiftKind>,
}

fn load_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split(',')
                .map(|f| {
                    f.trim()
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad matrix field {f:?}")))
                })
                .collect()
        })
        .collect()
}

impl OperatorSpec {
    pub fn build(&self, base: &Path) -> Result<LinearOperator> {
        let lift = self.lift.clone().unwrap_or_default();
        let (in_dim, kind) = match &self.kind {
            OperatorSpecKind::Identity { dim } => (*dim, OperatorKind::Identity),
            OperatorSpecKind::GaussianBlur { dim, width, std } => (
                *dim,
                OperatorKind::GaussianBlur {
                    width: *width,
                    std: *std,
                },
            ),
            OperatorSpecKind::AvgpoolSr { dim, factor } => {
                (*dim, OperatorKind::AvgPoolSr { factor: *factor })
            }
            OperatorSpecKind::BoxMask {
                dim,
                hide_start,
                hide_len,
            } => (
                *dim,
                OperatorKind::BoxMask {
                    hide_start: *hide_start,
                    hide_len: *hide_len,
                },
            ),
            OperatorSpecKind::Grayscale { channels, pixels } => (
                channels * pixels,
                OperatorKind::Grayscale {
                    channels: *channels,
                },
            ),
            OperatorSpecKind::Dense { matrix, matrix_csv } => {
                let rows = match (matrix, matrix_csv) {
                    (Some(rows), None) => rows.clone(),
                    (None, Some(csv)) => load_matrix_csv(&base.join(csv))?,
                    _ => {
                        return Err(Error::Parameter(
                            "dense operator needs exactly one of matrix or matrix_csv".into(),
                        ))
                    }
                };
                let in_dim = rows.first().map(|r| r.len()).unwrap_or(0);
                (in_dim, OperatorKind::Dense { rows })
            }
        };
        LinearOperator::new(in_dim, kind, lift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub prior: PriorSpec,
    pub operator: OperatorSpec,
    pub noise: NoiseSpec,
    /// Size of the fixed training set in dataset mode.
    #[serde(default = "default_train_signals")]
    pub train_signals: usize,
}

fn default_train_signals() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub iters: usize,
    pub batch_size: usize,
    pub lr_phi: f64,
    pub lr_psi: f64,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub data_source: DataSource,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub psi_warmup_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub num_measurements: usize,
    pub samples_per_measurement: usize,
    /// PSNR peak; defaults to the prior's dynamic range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak: Option<f64>,
    #[serde(default = "default_projections")]
    pub projections: usize,
}

fn default_projections() -> usize {
    64
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            num_measurements: 20,
            samples_per_measurement: 256,
            peak: None,
            projections: default_projections(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    pub ppb: PpbConfig,
    pub loss: LossWeights,
    pub train: TrainSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    /// Base directory for relative CSV paths; set when loading from a file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    /// Validates every field, returning an error that lists all violations.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();

        if NoiseSchedule::linear(
            self.schedule.num_steps,
            self.schedule.beta_min,
            self.schedule.beta_max,
        )
        .is_err()
        {
            bad.push("schedule: need num_steps >= 1 and 0 < beta_min <= beta_max < 1".into());
        }

        let prior = match self.problem.prior.build(&self.base_dir) {
            Ok(p) => Some(p),
            Err(e) => {
                bad.push(format!("problem.prior: {e}"));
                None
            }
        };
        let op = match self.problem.operator.build(&self.base_dir) {
            Ok(o) => Some(o),
            Err(e) => {
                bad.push(format!("problem.operator: {e}"));
                None
            }
        };
        if let (Some(p), Some(o)) = (&prior, &op) {
            if p.dim() != o.in_dim() {
                bad.push(format!(
                    "problem: operator input dim {} does not match prior dim {}",
                    o.in_dim(),
                    p.dim()
                ));
            }
        }
        if !(self.problem.noise.sigma_y >= 0.0) {
            bad.push("problem.noise.sigma_y must be >= 0".into());
        }
        if matches!(self.problem.noise.kind, NoiseKind::Poisson)
            && !(self.problem.noise.poisson_scale > 0.0)
        {
            bad.push("problem.noise.poisson_scale must be > 0".into());
        }
        if matches!(self.train.data_source, DataSource::Dataset) && self.problem.train_signals == 0
        {
            bad.push("problem.train_signals must be >= 1 in dataset mode".into());
        }

        if let Err(e) = self.ppb.validate() {
            bad.push(format!("ppb: {e}"));
        }
        if !(self.loss.gamma >= 0.0 && self.loss.gamma.is_finite()) {
            bad.push("loss.gamma must be finite and >= 0".into());
        }
        if !(self.loss.reg_coeff >= 0.0 && self.loss.reg_coeff.is_finite()) {
            bad.push("loss.reg_coeff must be finite and >= 0".into());
        }
        if self.loss.ikl_t_max > self.schedule.num_steps {
            bad.push(format!(
                "loss.ikl_t_max = {} exceeds schedule.num_steps = {}",
                self.loss.ikl_t_max, self.schedule.num_steps
            ));
        }

        if self.train.batch_size == 0 {
            bad.push("train.batch_size must be >= 1".into());
        }
        if !(self.train.lr_phi > 0.0) {
            bad.push("train.lr_phi must be > 0".into());
        }
        if !(self.train.lr_psi >= 0.0) {
            bad.push("train.lr_psi must be >= 0".into());
        }
        if let Some(c) = self.train.grad_clip {
            if !(c > 0.0) {
                bad.push("train.grad_clip must be > 0 when set".into());
            }
        }

        if self.network.embed_dim < 2 || self.network.embed_dim % 2 != 0 {
            bad.push("network.embed_dim must be even and >= 2".into());
        }
        if self.network.hidden.contains(&0) {
            bad.push("network.hidden widths must be >= 1".into());
        }

        if self.eval.num_measurements > 0 {
            if self.eval.samples_per_measurement < 2 {
                bad.push("eval.samples_per_measurement must be >= 2".into());
            }
            if self.eval.projections == 0 {
                bad.push("eval.projections must be >= 1".into());
            }
            if !matches!(self.problem.noise.kind, NoiseKind::Gaussian)
                || !(self.problem.noise.sigma_y > 0.0)
            {
                bad.push(
                    "eval: exact-posterior evaluation needs gaussian noise with sigma_y > 0".into(),
                );
            }
            if let Some(p) = self.eval.peak {
                if !(p > 0.0) {
                    bad.push("eval.peak must be > 0 when set".into());
                }
            }
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("\n")))
        }
    }

    /// PSNR peak: configured value or the prior's dynamic range
    /// (max over components of mean + 3 std minus the min counterpart).
    pub fn psnr_peak(&self, prior: &GaussianMixturePrior) -> f64 {
        if let Some(p) = self.eval.peak {
            return p;
        }
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for (m, v) in prior.means().iter().zip(prior.variances()) {
            for (mi, vi) in m.iter().zip(v) {
                hi = hi.max(mi + 3.0 * vi.sqrt());
                lo = lo.min(mi - 3.0 * vi.sqrt());
            }
        }
        (hi - lo).max(f64::MIN_POSITIVE)
    }

    /// Builds the training setup. The fixed dataset is drawn from the prior
    /// on its own stream so training and evaluation streams stay disjoint.
    pub fn build_trainer(&self) -> Result<Trainer> {
        self.validate()?;
        let prior = self.problem.prior.build(&self.base_dir)?;
        let op = self.problem.operator.build(&self.base_dir)?;
        let sched = NoiseSchedule::linear(
            self.schedule.num_steps,
            self.schedule.beta_min,
            self.schedule.beta_max,
        )?;
        let train_signals = match self.train.data_source {
            DataSource::Dataset => {
                let mut rng = SeededRng::new(derive_seed(self.seed, stream::DATASET));
                prior.sample(self.problem.train_signals, &mut rng)
            }
            DataSource::DaviG => Vec::new(),
        };
        Ok(Trainer {
            op,
            prior,
            sched,
            noise: self.problem.noise,
            ppb: self.ppb,
            weights: self.loss,
            network: self.network.clone(),
            cfg: TrainConfig {
                iters: self.train.iters,
                batch_size: self.train.batch_size,
                lr_phi: self.train.lr_phi,
                lr_psi: self.train.lr_psi,
                adam: self.train.adam,
                grad_clip: self.train.grad_clip,
                data_source: self.train.data_source,
                seed: self.seed,
                checkpoint_every: self.train.checkpoint_every,
                psi_warmup_iters: self.train.psi_warmup_iters,
            },
            train_signals,
        })
    }
}

/// Stream labels carving independent substreams out of the experiment seed.
pub mod stream {
    /// Fixed training dataset draws.
    pub const DATASET: u64 = 0xDA7A;
    /// Held-out evaluation measurements.
    pub const EVAL_HELDOUT: u64 = 0xE7A1;
    /// Evaluation over training-set measurements.
    pub const EVAL_TRAIN: u64 = 0xE725;
    /// Posterior-distance internals per measurement.
    pub const POSTERIOR_METRIC: u64 = 0x9057;
}
