//! Discrete-time variance-preserving diffusion machinery.
//!
//! A [`NoiseSchedule`] holds the per-step noise levels `beta_t` and the
//! cumulative products `alpha_bar_t = prod_{s<=t} (1 - beta_s)`, with the
//! convention `alpha_bar_0 = 1`. The forward transition kernel is
//!
//! ```text
//! x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps,   eps ~ N(0, I)
//! ```
//!
//! and its conditional score is `-(x_t - sqrt(alpha_bar_t) x_0) / (1 - alpha_bar_t)`.
//! [`reverse_sde_sample`] integrates the reverse-time SDE with Euler-Maruyama
//! steps against any [`Score`] oracle; it exists as a sampling-based
//! diagnostic for score implementations, not as the inference path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

/// Discrete beta schedule with cached cumulative products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    num_steps: usize,
    /// betas[t - 1] is beta_t for t = 1..=num_steps.
    betas: Vec<f64>,
    /// alpha_bars[t] for t = 0..=num_steps; alpha_bars[0] = 1.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of beta from `beta_min` to `beta_max` over
    /// `num_steps` steps (endpoints inclusive).
    pub fn linear(num_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if num_steps < 1 {
            return Err(Error::Parameter("num_steps must be >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        let betas = if num_steps == 1 {
            vec![beta_min]
        } else {
            (0..num_steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (num_steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Parameter("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            num_steps: betas.len(),
            betas,
            alpha_bars,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// beta_t for t in 1..=num_steps.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.num_steps, "beta index {t} out of range");
        self.betas[t - 1]
    }

    /// alpha_bar_t for t in 0..=num_steps.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.num_steps, "alpha_bar index {t} out of range");
        self.alpha_bars[t]
    }

    /// alpha_bar looked up at the quantized step `floor(a * num_steps)` for
    /// a continuous fraction a in [0, 1].
    pub fn alpha_bar_at_frac(&self, a: f64) -> f64 {
        let idx = ((a * self.num_steps as f64).floor() as usize).min(self.num_steps);
        self.alpha_bars[idx]
    }
}

/// Discrete diffusion time t in [0, num_steps].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeIndex(pub usize);

impl TimeIndex {
    pub fn new(t: usize, sched: &NoiseSchedule) -> Result<Self> {
        if t > sched.num_steps() {
            return Err(Error::Parameter(format!(
                "time index {t} exceeds schedule length {}",
                sched.num_steps()
            )));
        }
        Ok(TimeIndex(t))
    }

    /// Continuous fraction t / num_steps.
    pub fn frac(self, sched: &NoiseSchedule) -> f64 {
        self.0 as f64 / sched.num_steps() as f64
    }
}

fn check_time_in_kernel_range(t: TimeIndex, sched: &NoiseSchedule) -> Result<()> {
    if t.0 < 1 || t.0 > sched.num_steps() {
        return Err(Error::Parameter(format!(
            "kernel time must satisfy 1 <= t <= {}, got {}",
            sched.num_steps(),
            t.0
        )));
    }
    Ok(())
}

/// Draws from the forward transition kernel given pre-sampled noise:
/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn forward_marginal_sample(
    x0: &[f64],
    t: TimeIndex,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_time_in_kernel_range(t, sched)?;
    if x0.len() != eps.len() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, eps has length {}",
            x0.len(),
            eps.len()
        )));
    }
    let ab = sched.alpha_bar(t.0);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// Score of the transition kernel q(x_t | x_0) at x_t:
/// `-(x_t - sqrt(alpha_bar_t) x_0) / (1 - alpha_bar_t)`.
///
/// Undefined at t = 0 where the kernel degenerates to a point mass.
pub fn transition_score(
    x_t: &[f64],
    x0: &[f64],
    t: TimeIndex,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t.0 == 0 {
        return Err(Error::Domain(
            "transition score is undefined at t = 0".into(),
        ));
    }
    check_time_in_kernel_range(t, sched)?;
    if x_t.len() != x0.len() {
        return Err(Error::Dimension(format!(
            "x_t has length {}, x0 has length {}",
            x_t.len(),
            x0.len()
        )));
    }
    let ab = sched.alpha_bar(t.0);
    let (sa, var) = (ab.sqrt(), 1.0 - ab);
    Ok(x_t
        .iter()
        .zip(x0)
        .map(|(xt, x)| -(xt - sa * x) / var)
        .collect())
}

/// A time-dependent score field over signal space.
///
/// Implemented by the analytic prior, the learned implicit score network, and
/// by plain closures so tests can substitute exact conditional scores.
pub trait Score {
    fn score(&self, x: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64>;
}

impl<F> Score for F
where
    F: Fn(&[f64], TimeIndex, &NoiseSchedule) -> Vec<f64>,
{
    fn score(&self, x: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64> {
        self(x, t, sched)
    }
}

/// Euler-Maruyama integration of the reverse-time SDE from t = num_steps down
/// to 0, starting each chain at standard normal noise. Returns `n` samples of
/// dimension `dim`. Chains are seeded independently from `rng_seed` so the
/// result does not depend on evaluation order.
///
/// Per step: `x <- x * (1 + beta_t / 2) + beta_t * score(x, t) + sqrt(beta_t) * z`,
/// with the noise omitted on the final step.
pub fn reverse_sde_sample(
    prior_score: &dyn Score,
    sched: &NoiseSchedule,
    dim: usize,
    n: usize,
    rng_seed: u64,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|chain| {
            let mut rng = SeededRng::new(derive_seed(rng_seed, chain as u64));
            let mut x = rng.normal_vec(dim);
            for t in (1..=sched.num_steps()).rev() {
                let beta = sched.beta(t);
                let s = prior_score.score(&x, TimeIndex(t), sched);
                for i in 0..dim {
                    let z = if t > 1 { rng.standard_normal() } else { 0.0 };
                    x[i] = x[i] * (1.0 + 0.5 * beta) + beta * s[i] + beta.sqrt() * z;
                }
            }
            x
        })
        .collect()
}
