//! Alternating optimization of the posterior map and the implicit score net.
//!
//! One step draws a batch of clean signals, synthesizes measurements, places
//! each pair on the bridge, and then updates the two networks in a fixed
//! order: the score network first by denoising score matching on the map's
//! current outputs (held constant), then the posterior map by data
//! consistency plus the score-distillation gradient plus regularization,
//! with the distillation term reading the just-updated score network. One
//! (a, t, eps) draw per batch element per step; all randomness comes from a
//! single checkpointable stream so runs and resumptions are bit-exact in
//! single-threaded mode.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, TimeIndex};
use crate::error::{Error, Result};
use crate::losses::{
    data_consistency, ikl_grad_phi, regularization, score_matching_loss, LossWeights,
};
use crate::networks::{Activation, AmortizedPosterior, ImplicitScoreNet};
use crate::operators::{apply_forward_model, LinearOperator, NoiseSpec};
use crate::ppb::{ppb_sample, sample_a, PpbConfig};
use crate::prior::GaussianMixturePrior;
use crate::rng::{derive_seed, RngState, SeededRng};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Draw training signals from a fixed dataset.
    #[default]
    Dataset,
    /// Draw fresh training signals from the prior each step.
    DaviG,
}

/// Adaptive-moment hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// Bias-corrected first/second-moment update with decoupled weight decay.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + hp.eps_opt) + hp.weight_decay * params[i]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total number of alternating steps.
    pub iters: usize,
    pub batch_size: usize,
    pub lr_phi: f64,
    pub lr_psi: f64,
    #[serde(default)]
    pub adam: AdamParams,
    /// Global-norm gradient clip; absent means off.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub data_source: DataSource,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables periodic saves.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Score-matching steps fitting the score net to the prior before the
    /// alternating loop starts. Plays the role of initializing the implicit
    /// score from the pretrained prior model; 0 skips the warmup.
    #[serde(default)]
    pub psi_warmup_iters: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("train.batch_size must be >= 1".to_string());
        }
        if !(self.lr_phi > 0.0) {
            bad.push("train.lr_phi must be > 0".to_string());
        }
        if !(self.lr_psi >= 0.0) {
            bad.push("train.lr_psi must be >= 0".to_string());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                bad.push("train.grad_clip must be > 0 when set".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("\n")))
        }
    }
}

/// Architecture of both networks; they share layout and the init seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub embed_dim: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            hidden: vec![64, 64],
            activation: Activation::Silu,
            embed_dim: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iter: u64,
    pub loss_c: f64,
    pub loss_s: f64,
    pub delta_s_sq: f64,
    pub reg: f64,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: &str = "iter,loss_c,loss_s,delta_s_sq,reg,wall_ms";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.loss_c, self.loss_s, self.delta_s_sq, self.reg, self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub iteration: u64,
    pub phi: AmortizedPosterior,
    pub psi: ImplicitScoreNet,
    pub phi_opt: AdamState,
    pub psi_opt: AdamState,
    pub rng: SeededRng,
    /// Append-only per-step loss log (not checkpointed).
    pub log: Vec<StepLog>,
}

/// Self-contained training snapshot: everything needed to resume training or
/// run inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schedule: NoiseSchedule,
    pub phi: AmortizedPosterior,
    pub psi: ImplicitScoreNet,
    pub optimizer: OptimizerCheckpoint,
    pub iteration: u64,
    pub rng: RngState,
    pub operator: LinearOperator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerCheckpoint {
    pub phi: AdamState,
    pub psi: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Owns the full problem setup and drives the alternating loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub op: LinearOperator,
    pub prior: GaussianMixturePrior,
    pub sched: NoiseSchedule,
    pub noise: NoiseSpec,
    pub ppb: PpbConfig,
    pub weights: LossWeights,
    pub network: NetworkSpec,
    pub cfg: TrainConfig,
    /// Fixed signals for [`DataSource::Dataset`] mode.
    pub train_signals: Vec<Vec<f64>>,
}

impl Trainer {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.ppb.validate()?;
        self.weights.validate(&self.sched)?;
        if self.op.in_dim() != self.prior.dim() {
            return Err(Error::Dimension(format!(
                "operator input dim {} vs prior dim {}",
                self.op.in_dim(),
                self.prior.dim()
            )));
        }
        if matches!(self.cfg.data_source, DataSource::Dataset) && self.train_signals.is_empty() {
            return Err(Error::Parameter(
                "dataset mode needs at least one training signal".into(),
            ));
        }
        if self
            .train_signals
            .iter()
            .any(|s| s.len() != self.prior.dim())
        {
            return Err(Error::Dimension(
                "training signals must match the prior dimension".into(),
            ));
        }
        Ok(())
    }

    pub fn init_state(&self) -> Result<TrainState> {
        self.validate()?;
        let d = self.prior.dim();
        let net_seed = derive_seed(self.cfg.seed, 0xA11C);
        let phi = AmortizedPosterior::new(
            d,
            &self.network.hidden,
            self.network.activation,
            self.network.embed_dim,
            self.ppb.h,
            net_seed,
        )?;
        let psi = ImplicitScoreNet::new(
            d,
            &self.network.hidden,
            self.network.activation,
            self.network.embed_dim,
            net_seed,
        )?;
        let phi_opt = AdamState::new(phi.num_params());
        let psi_opt = AdamState::new(psi.num_params());
        let mut state = TrainState {
            iteration: 0,
            phi,
            psi,
            phi_opt,
            psi_opt,
            rng: SeededRng::new(derive_seed(self.cfg.seed, 0x7247)),
            log: Vec::new(),
        };
        self.warmup_psi(&mut state)?;
        Ok(state)
    }

    /// Fits the score net to the prior by denoising score matching on fresh
    /// prior draws over the full time range. Part of state initialization, so
    /// resumed checkpoints never repeat it; the posterior map is untouched.
    fn warmup_psi(&self, state: &mut TrainState) -> Result<()> {
        if self.cfg.psi_warmup_iters == 0 || self.cfg.lr_psi == 0.0 {
            return Ok(());
        }
        let warm_weights = LossWeights {
            ikl_t_max: self.sched.num_steps(),
            ..self.weights
        };
        let d = self.prior.dim();
        for _ in 0..self.cfg.psi_warmup_iters {
            let mut grad = vec![0.0; state.psi.num_params()];
            for _ in 0..self.cfg.batch_size {
                let x0 = self
                    .prior
                    .sample(1, &mut state.rng)
                    .pop()
                    .expect("one sample requested");
                let t = TimeIndex(1 + state.rng.below(self.sched.num_steps()));
                let eps = state.rng.normal_vec(d);
                let (_, g) =
                    score_matching_loss(&state.psi, &x0, t, &eps, &self.sched, &warm_weights)?;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi / self.cfg.batch_size as f64;
                }
            }
            clip_global_norm(&mut grad, self.cfg.grad_clip);
            adam_update(
                state.psi.params_mut(),
                &grad,
                &mut state.psi_opt,
                self.cfg.lr_psi,
                &self.cfg.adam,
            );
        }
        if !vecops::all_finite(state.psi.params()) {
            return Err(Error::Numeric("non-finite score net after warmup".into()));
        }
        Ok(())
    }

    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        Checkpoint {
            schedule: self.sched.clone(),
            phi: state.phi.clone(),
            psi: state.psi.clone(),
            optimizer: OptimizerCheckpoint {
                phi: state.phi_opt.clone(),
                psi: state.psi_opt.clone(),
            },
            iteration: state.iteration,
            rng: state.rng.state(),
            operator: self.op.clone(),
        }
    }

    pub fn resume(&self, cp: &Checkpoint) -> Result<TrainState> {
        self.validate()?;
        if cp.schedule != self.sched {
            return Err(Error::State(
                "checkpoint schedule differs from the configured schedule".into(),
            ));
        }
        Ok(TrainState {
            iteration: cp.iteration,
            phi: cp.phi.clone(),
            psi: cp.psi.clone(),
            phi_opt: cp.optimizer.phi.clone(),
            psi_opt: cp.optimizer.psi.clone(),
            rng: SeededRng::restore(cp.rng),
            log: Vec::new(),
        })
    }

    fn draw_signal(&self, rng: &mut SeededRng) -> Vec<f64> {
        match self.cfg.data_source {
            DataSource::Dataset => {
                let idx = rng.below(self.train_signals.len());
                self.train_signals[idx].clone()
            }
            DataSource::DaviG => self
                .prior
                .sample(1, rng)
                .pop()
                .expect("one sample requested"),
        }
    }

    /// Executes one alternation. The score network is updated before the
    /// posterior map, and the map's distillation gradient reads the updated
    /// score network at the same (x_t, t) draws.
    pub fn step(&self, state: &mut TrainState) -> Result<StepLog> {
        let start = Instant::now();
        let d = self.prior.dim();
        let b = self.cfg.batch_size;
        let ikl_on = self.weights.ikl_t_max >= 1;

        struct Element {
            x0: Vec<f64>,
            m: crate::operators::Measurement,
            y_a: Vec<f64>,
            a: f64,
            t: TimeIndex,
            eps: Vec<f64>,
            x_hat: Vec<f64>,
        }

        let mut elements = Vec::with_capacity(b);
        for _ in 0..b {
            let x0 = self.draw_signal(&mut state.rng);
            let m = apply_forward_model(&self.op, &x0, &self.noise, &mut state.rng)?;
            let a = sample_a(&self.ppb, &mut state.rng);
            let lifted = self.op.lift(&m.y)?;
            let y_a = ppb_sample(&lifted, &x0, a, &self.ppb, &self.sched, &mut state.rng)?;
            let x_hat = state.phi.forward(&y_a, a, &self.sched)?;
            let (t, eps) = if ikl_on {
                (
                    TimeIndex(1 + state.rng.below(self.weights.ikl_t_max)),
                    state.rng.normal_vec(d),
                )
            } else {
                (TimeIndex(0), Vec::new())
            };
            elements.push(Element {
                x0,
                m,
                y_a,
                a,
                t,
                eps,
                x_hat,
            });
        }

        // Score-network update on the map's outputs, held constant.
        let mut loss_s = 0.0;
        if ikl_on && self.cfg.lr_psi > 0.0 {
            let mut psi_grad = vec![0.0; state.psi.num_params()];
            for el in &elements {
                let (l, g) = score_matching_loss(
                    &state.psi,
                    &el.x_hat,
                    el.t,
                    &el.eps,
                    &self.sched,
                    &self.weights,
                )?;
                loss_s += l;
                for (acc, gi) in psi_grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            loss_s /= b as f64;
            for g in &mut psi_grad {
                *g /= b as f64;
            }
            clip_global_norm(&mut psi_grad, self.cfg.grad_clip);
            adam_update(
                state.psi.params_mut(),
                &psi_grad,
                &mut state.psi_opt,
                self.cfg.lr_psi,
                &self.cfg.adam,
            );
        } else if ikl_on {
            for el in &elements {
                let (l, _) = score_matching_loss(
                    &state.psi,
                    &el.x_hat,
                    el.t,
                    &el.eps,
                    &self.sched,
                    &self.weights,
                )?;
                loss_s += l;
            }
            loss_s /= b as f64;
        }

        // Posterior-map update.
        let mut phi_grad = vec![0.0; state.phi.num_params()];
        let mut loss_c = 0.0;
        let mut reg_total = 0.0;
        let mut delta_s_sq = 0.0;
        for el in &elements {
            let (x_hat, trace) = state.phi.forward_traced(&el.y_a, el.a, &self.sched)?;
            debug_assert_eq!(x_hat, el.x_hat);
            let dc = data_consistency(&x_hat, &el.m, &self.op, &self.weights)?;
            let rg = regularization(&x_hat, &el.x0, &self.weights)?;
            loss_c += dc.value;
            reg_total += rg.value;
            let upstream = vecops::add_scaled(&dc.grad, 1.0, &rg.grad);
            let (pg, _) = state.phi.backward(&trace, &upstream);
            for (acc, gi) in phi_grad.iter_mut().zip(&pg) {
                *acc += gi;
            }
            if ikl_on {
                let ikl = ikl_grad_phi(
                    &state.phi,
                    &state.psi,
                    &self.prior,
                    &el.y_a,
                    el.a,
                    el.t,
                    &el.eps,
                    &self.sched,
                    &self.weights,
                )?;
                delta_s_sq += ikl.delta_s_sq;
                for (acc, gi) in phi_grad.iter_mut().zip(&ikl.phi_grad) {
                    *acc += gi;
                }
            }
        }
        loss_c /= b as f64;
        reg_total /= b as f64;
        delta_s_sq /= b as f64;
        for g in &mut phi_grad {
            *g /= b as f64;
        }
        clip_global_norm(&mut phi_grad, self.cfg.grad_clip);
        adam_update(
            state.phi.params_mut(),
            &phi_grad,
            &mut state.phi_opt,
            self.cfg.lr_phi,
            &self.cfg.adam,
        );

        state.iteration += 1;
        let log = StepLog {
            iter: state.iteration,
            loss_c,
            loss_s,
            delta_s_sq,
            reg: reg_total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };

        let finite = log.loss_c.is_finite()
            && log.loss_s.is_finite()
            && log.delta_s_sq.is_finite()
            && log.reg.is_finite()
            && vecops::all_finite(state.phi.params())
            && vecops::all_finite(state.psi.params());
        if !finite {
            return Err(Error::Numeric(format!(
                "non-finite state at iteration {}: loss_c={}, loss_s={}, delta_s_sq={}, reg={}",
                state.iteration, log.loss_c, log.loss_s, log.delta_s_sq, log.reg
            )));
        }

        state.log.push(log);
        Ok(log)
    }

    /// Runs the configured number of steps from a fresh state, streaming
    /// per-step metrics and periodic checkpoints into `out_dir` when given.
    /// On a numeric abort the last consistent state is snapshotted next to
    /// the metrics for diagnosis.
    pub fn run(&self, out_dir: Option<&Path>) -> Result<TrainState> {
        let mut state = self.init_state()?;
        self.run_from(&mut state, out_dir)?;
        Ok(state)
    }

    pub fn run_from(&self, state: &mut TrainState, out_dir: Option<&Path>) -> Result<()> {
        let mut metrics = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Error::io(dir.display().to_string(), e))?;
                let path = dir.join("metrics.csv");
                let mut f = std::fs::File::create(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                writeln!(f, "{METRICS_HEADER}")
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                Some((f, path))
            }
            None => None,
        };
        let start_iter = state.iteration;
        while state.iteration < start_iter + self.cfg.iters as u64 {
            let log = match self.step(state) {
                Ok(log) => log,
                Err(e) => {
                    if let Some(dir) = out_dir {
                        let snap = dir.join("abort_snapshot.json");
                        let _ = self.checkpoint(state).save(&snap);
                    }
                    return Err(e);
                }
            };
            if let Some((f, path)) = metrics.as_mut() {
                writeln!(f, "{}", log.csv_row())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0
                    && state.iteration % self.cfg.checkpoint_every as u64 == 0
                {
                    let path = dir.join(format!("checkpoint_{:06}.json", state.iteration));
                    self.checkpoint(state).save(&path)?;
                }
            }
        }
        Ok(())
    }
}

fn clip_global_norm(grad: &mut [f64], clip: Option<f64>) {
    if let Some(c) = clip {
        let norm = vecops::norm2(grad);
        if norm > c {
            let s = c / norm;
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
    }
}
