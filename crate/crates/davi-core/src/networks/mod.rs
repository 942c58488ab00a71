//! The amortized posterior map and the implicit score network.
//!
//! Both are small MLPs over flat signals. The posterior map consumes the
//! lifted measurement concatenated with a sinusoidal embedding of the bridge
//! position `a` and produces its output in data-prediction form,
//!
//! ```text
//! x_hat = y_a + alpha_bar_a * mlp(concat(y_a, embed(a)))
//! ```
//!
//! so a zero-initialized output layer starts as the identity map. The score
//! network consumes `(x_t, embed(t / T))` and predicts noise; its score-form
//! output is `-eps(x_t, t) / sqrt(1 - alpha_bar_t)`.

mod mlp;

pub use mlp::{Activation, ForwardTrace, Mlp};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, Score, TimeIndex};
use crate::error::{Error, Result};
use crate::operators::{LinearOperator, Measurement};
use crate::rng::SeededRng;
use crate::vecops;

/// Sinusoidal features of a scalar in [0, 1]: pairs (sin, cos) at frequencies
/// pi * 2^i. Deterministic and Lipschitz; endpoints map to distinct vectors.
pub fn sinusoidal_embed(u: f64, dim: usize) -> Vec<f64> {
    assert!(
        dim >= 2 && dim % 2 == 0,
        "embedding dim must be even and >= 2"
    );
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = std::f64::consts::PI * (1u64 << i) as f64;
        out.push((omega * u).sin());
        out.push((omega * u).cos());
    }
    out
}

/// Data-prediction form: the network output enters through the alpha_bar gate.
#[inline]
pub fn data_prediction(y_a: &[f64], correction: &[f64], alpha_bar_a: f64) -> Vec<f64> {
    vecops::add_scaled(y_a, alpha_bar_a, correction)
}

/// Amortized map from (lifted, perturbed) measurements to posterior samples.
#[derive(Debug, Serialize, Deserialize)]
pub struct AmortizedPosterior {
    mlp: Mlp,
    signal_dim: usize,
    embed_dim: usize,
    /// Perturbation scale of the injected sampling noise.
    h: f64,
    /// Running count of network evaluations (not checkpointed).
    #[serde(skip, default)]
    nfe: AtomicU64,
}

impl Clone for AmortizedPosterior {
    fn clone(&self) -> Self {
        AmortizedPosterior {
            mlp: self.mlp.clone(),
            signal_dim: self.signal_dim,
            embed_dim: self.embed_dim,
            h: self.h,
            nfe: AtomicU64::new(self.nfe.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for AmortizedPosterior {
    fn eq(&self, other: &Self) -> bool {
        self.mlp == other.mlp
            && self.signal_dim == other.signal_dim
            && self.embed_dim == other.embed_dim
            && self.h == other.h
    }
}

/// Forward record of the posterior map, consumed by its backward pass.
#[derive(Debug, Clone)]
pub struct PosteriorTrace {
    mlp_trace: ForwardTrace,
    alpha_bar_a: f64,
}

impl AmortizedPosterior {
    pub fn new(
        signal_dim: usize,
        hidden: &[usize],
        activation: Activation,
        embed_dim: usize,
        h: f64,
        seed: u64,
    ) -> Result<Self> {
        if signal_dim == 0 {
            return Err(Error::Parameter("signal dimension is zero".into()));
        }
        if embed_dim < 2 || embed_dim % 2 != 0 {
            return Err(Error::Parameter("embed_dim must be even and >= 2".into()));
        }
        if !(h >= 0.0) {
            return Err(Error::Parameter("perturbation scale h must be >= 0".into()));
        }
        let mut dims = vec![signal_dim + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(signal_dim);
        Ok(AmortizedPosterior {
            mlp: Mlp::zero_output_init(dims, activation, seed),
            signal_dim,
            embed_dim,
            h,
            nfe: AtomicU64::new(0),
        })
    }

    pub fn signal_dim(&self) -> usize {
        self.signal_dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nfe(&self) -> u64 {
        self.nfe.load(Ordering::Relaxed)
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    fn check_inputs(&self, y_a: &[f64], a: f64) -> Result<()> {
        if y_a.len() != self.signal_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, expected {}",
                y_a.len(),
                self.signal_dim
            )));
        }
        if !vecops::all_finite(y_a) || !a.is_finite() {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Parameter(format!("a must lie in [0, 1], got {a}")));
        }
        Ok(())
    }

    pub fn forward(&self, y_a: &[f64], a: f64, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(self.forward_traced(y_a, a, sched)?.0)
    }

    pub fn forward_traced(
        &self,
        y_a: &[f64],
        a: f64,
        sched: &NoiseSchedule,
    ) -> Result<(Vec<f64>, PosteriorTrace)> {
        self.check_inputs(y_a, a)?;
        let mut input = Vec::with_capacity(self.signal_dim + self.embed_dim);
        input.extend_from_slice(y_a);
        input.extend(sinusoidal_embed(a, self.embed_dim));
        let trace = self.mlp.forward(&input);
        self.nfe.fetch_add(1, Ordering::Relaxed);
        let alpha_bar_a = sched.alpha_bar_at_frac(a);
        let out = data_prediction(y_a, trace.output(), alpha_bar_a);
        Ok((
            out,
            PosteriorTrace {
                mlp_trace: trace,
                alpha_bar_a,
            },
        ))
    }

    /// Propagates an upstream gradient at x_hat to (parameter grads, grad at
    /// y_a). The residual path contributes the upstream itself to the input
    /// gradient; the MLP path enters through the alpha_bar gate.
    pub fn backward(&self, trace: &PosteriorTrace, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gated = vecops::scale(upstream, trace.alpha_bar_a);
        let (pg, ig_full) = self.mlp.backward(&trace.mlp_trace, &gated);
        let ig_y = ig_full[..self.signal_dim]
            .iter()
            .zip(upstream)
            .map(|(g, u)| g + u)
            .collect();
        (pg, ig_y)
    }

    /// Single-step inference: lift the measurement, perturb with h * z, run
    /// the map at a = 1. Exactly one network evaluation.
    pub fn sample(
        &self,
        m: &Measurement,
        op: &LinearOperator,
        sched: &NoiseSchedule,
        rng: &mut SeededRng,
    ) -> Result<Vec<f64>> {
        let lifted = op.lift(&m.y)?;
        let perturbed: Vec<f64> = lifted
            .iter()
            .map(|v| v + self.h * rng.standard_normal())
            .collect();
        self.forward(&perturbed, 1.0, sched)
    }
}

/// Score network over diffused signals, in noise-prediction form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitScoreNet {
    mlp: Mlp,
    signal_dim: usize,
    embed_dim: usize,
}

impl ImplicitScoreNet {
    pub fn new(
        signal_dim: usize,
        hidden: &[usize],
        activation: Activation,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if signal_dim == 0 {
            return Err(Error::Parameter("signal dimension is zero".into()));
        }
        if embed_dim < 2 || embed_dim % 2 != 0 {
            return Err(Error::Parameter("embed_dim must be even and >= 2".into()));
        }
        let mut dims = vec![signal_dim + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(signal_dim);
        Ok(ImplicitScoreNet {
            mlp: Mlp::zero_output_init(dims, activation, seed),
            signal_dim,
            embed_dim,
        })
    }

    pub fn signal_dim(&self) -> usize {
        self.signal_dim
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    fn net_input(&self, x_t: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.signal_dim + self.embed_dim);
        input.extend_from_slice(x_t);
        input.extend(sinusoidal_embed(t.frac(sched), self.embed_dim));
        input
    }

    /// Raw noise prediction eps(x_t, t).
    pub fn noise_pred(&self, x_t: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64> {
        assert_eq!(x_t.len(), self.signal_dim, "input width mismatch");
        self.mlp.forward_value(&self.net_input(x_t, t, sched))
    }

    pub fn noise_pred_traced(
        &self,
        x_t: &[f64],
        t: TimeIndex,
        sched: &NoiseSchedule,
    ) -> ForwardTrace {
        assert_eq!(x_t.len(), self.signal_dim, "input width mismatch");
        self.mlp.forward(&self.net_input(x_t, t, sched))
    }

    /// Parameter gradients for an upstream gradient at the noise output.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Vec<f64> {
        self.mlp.backward(trace, upstream).0
    }

    /// Score-form output `-eps(x_t, t) / sqrt(1 - alpha_bar_t)`.
    /// Undefined at t = 0 where the denominator vanishes.
    pub fn score_eval(&self, x_t: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        if t.0 == 0 {
            return Err(Error::Domain(
                "score-form output is undefined at t = 0".into(),
            ));
        }
        if t.0 > sched.num_steps() {
            return Err(Error::Parameter(format!(
                "t = {} exceeds schedule length {}",
                t.0,
                sched.num_steps()
            )));
        }
        if x_t.len() != self.signal_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, expected {}",
                x_t.len(),
                self.signal_dim
            )));
        }
        let denom = (1.0 - sched.alpha_bar(t.0)).sqrt();
        Ok(vecops::scale(&self.noise_pred(x_t, t, sched), -1.0 / denom))
    }
}

impl Score for ImplicitScoreNet {
    fn score(&self, x: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64> {
        self.score_eval(x, t, sched)
            .expect("score oracle called with t in kernel range")
    }
}
