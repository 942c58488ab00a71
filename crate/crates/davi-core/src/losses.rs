//! Training objectives and their gradients.
//!
//! The posterior map is trained by three terms: a measurement-consistency
//! loss, an l2 pull toward the training signal, and a score-distillation
//! gradient that moves the map so the diffused implicit distribution matches
//! the prior. The distillation term has no scalar loss; it is defined directly
//! as a gradient,
//!
//! ```text
//! g_phi = w(t) * (s_psi(x_t, t) - s_prior(x_t, t)) * dx_t/dphi,
//! ```
//!
//! with both scores consumed as plain values (nothing differentiates through
//! them). The companion score network is fitted by denoising score matching
//! against the transition-kernel score at samples of the current map, with
//! the map's output treated as a constant so no gradient reaches the map from
//! that loss. Closed-form Gaussian and point-mass variants of the
//! distillation gradient are provided as oracles; the point-mass form is the
//! classic score-distillation estimator.

use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_marginal_sample, NoiseSchedule, Score, TimeIndex};
use crate::error::{Error, Result};
use crate::networks::{AmortizedPosterior, ImplicitScoreNet};
use crate::operators::{poisson_weighted_residual, LinearOperator, Measurement, NoiseKind};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// w(t) = 1.
    #[default]
    Constant,
    /// w(t) = 1 / sqrt(1 - alpha_bar_t).
    InvSqrtOneMinusAlphaBar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Data-consistency weight.
    pub gamma: f64,
    /// l2 regularization coefficient toward the training signal.
    pub reg_coeff: f64,
    /// Upper end of the diffusion-time range used by the distillation and
    /// score-matching terms. Zero disables both terms.
    pub ikl_t_max: usize,
    #[serde(default)]
    pub w_kind: WeightKind,
}

impl LossWeights {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter("gamma must be finite and >= 0".into()));
        }
        if !(self.reg_coeff >= 0.0 && self.reg_coeff.is_finite()) {
            return Err(Error::Parameter("reg_coeff must be finite and >= 0".into()));
        }
        if self.ikl_t_max > sched.num_steps() {
            return Err(Error::Parameter(format!(
                "ikl_t_max = {} exceeds schedule length {}",
                self.ikl_t_max,
                sched.num_steps()
            )));
        }
        Ok(())
    }

    pub fn w_of_t(&self, t: TimeIndex, sched: &NoiseSchedule) -> f64 {
        match self.w_kind {
            WeightKind::Constant => 1.0,
            WeightKind::InvSqrtOneMinusAlphaBar => 1.0 / (1.0 - sched.alpha_bar(t.0)).sqrt(),
        }
    }

    fn check_t(&self, t: TimeIndex) -> Result<()> {
        if t.0 < 1 || t.0 > self.ikl_t_max {
            return Err(Error::Parameter(format!(
                "t = {} outside the configured range 1..={}",
                t.0, self.ikl_t_max
            )));
        }
        Ok(())
    }
}

/// A scalar loss together with its gradient with respect to the first
/// argument of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Measurement-consistency loss at a restored signal.
///
/// Gaussian measurements: `gamma * ||y - H x_hat||^2`, gradient
/// `-2 gamma H^T (y - H x_hat)`. Poisson measurements weight each bin by
/// `1 / (2 y_i)`.
pub fn data_consistency(
    x_hat: &[f64],
    m: &Measurement,
    op: &LinearOperator,
    weights: &LossWeights,
) -> Result<ValueGrad> {
    let hx = op.apply(x_hat)?;
    if hx.len() != m.y.len() {
        return Err(Error::Dimension(format!(
            "measurement has length {}, operator output is {}",
            m.y.len(),
            hx.len()
        )));
    }
    let resid = vecops::sub(&m.y, &hx);
    match m.noise_kind {
        NoiseKind::Gaussian => {
            let value = weights.gamma * vecops::sq_norm(&resid);
            let grad = vecops::scale(&op.adjoint(&resid)?, -2.0 * weights.gamma);
            Ok(ValueGrad { value, grad })
        }
        NoiseKind::Poisson => {
            let value = weights.gamma * poisson_weighted_residual(op, x_hat, &m.y)?;
            let weighted: Vec<f64> = resid
                .iter()
                .zip(&m.y)
                .map(|(r, yi)| r / (2.0 * yi))
                .collect();
            let grad = vecops::scale(&op.adjoint(&weighted)?, -2.0 * weights.gamma);
            Ok(ValueGrad { value, grad })
        }
    }
}

/// l2 pull toward the training signal: `reg_coeff * ||x0 - x_hat||^2`.
pub fn regularization(x_hat: &[f64], x0_train: &[f64], weights: &LossWeights) -> Result<ValueGrad> {
    if x_hat.len() != x0_train.len() {
        return Err(Error::Dimension(format!(
            "x_hat has length {}, x0 has length {}",
            x_hat.len(),
            x0_train.len()
        )));
    }
    let diff = vecops::sub(x0_train, x_hat);
    Ok(ValueGrad {
        value: weights.reg_coeff * vecops::sq_norm(&diff),
        grad: vecops::scale(&diff, -2.0 * weights.reg_coeff),
    })
}

/// Denoising score matching for the implicit score network at one
/// (x0_hat, t, eps) draw:
///
/// `||s_psi(x_t, t) + eps / sqrt(1 - alpha_bar_t)||^2`,
/// `x_t = sqrt(alpha_bar_t) x0_hat + sqrt(1 - alpha_bar_t) eps`.
///
/// Returns the loss and the exact gradient with respect to the score
/// network's parameters. `x0_hat` enters as a constant: the posterior map
/// receives no gradient from this loss by construction.
pub fn score_matching_loss(
    psi: &ImplicitScoreNet,
    x0_hat: &[f64],
    t: TimeIndex,
    eps: &[f64],
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    weights.check_t(t)?;
    let x_t = forward_marginal_sample(x0_hat, t, eps, sched)?;
    let denom = (1.0 - sched.alpha_bar(t.0)).sqrt();
    let trace = psi.noise_pred_traced(&x_t, t, sched);
    // score-form output and kernel-score target
    let s: Vec<f64> = trace.output().iter().map(|e| -e / denom).collect();
    let target: Vec<f64> = eps.iter().map(|e| -e / denom).collect();
    let diff = vecops::sub(&s, &target);
    let loss = vecops::sq_norm(&diff);
    // dL/d eps_out = -2 (s - target) / denom
    let upstream = vecops::scale(&diff, -2.0 / denom);
    let grads = psi.backward(&trace, &upstream);
    Ok((loss, grads))
}

/// Output of the score-distillation gradient: parameter gradients for the
/// posterior map plus the squared score discrepancy, which is logged as a
/// monitoring scalar but never differentiated.
#[derive(Debug, Clone)]
pub struct DistillationGrad {
    pub phi_grad: Vec<f64>,
    pub delta_s_sq: f64,
}

/// Score-distillation gradient of the integral-KL objective for the
/// posterior map, at one (y_a, a, t, eps) draw.
///
/// Recomputes `x_hat = phi(y_a, a)` and `x_t` from the given draw, evaluates
/// both scores at x_t as constants, and pushes
/// `w(t) * sqrt(alpha_bar_t) * (s_psi - s_prior)` through the map's backward
/// pass. There is no scalar loss; the estimator is the gradient itself.
#[allow(clippy::too_many_arguments)]
pub fn ikl_grad_phi(
    phi: &AmortizedPosterior,
    implicit_score: &dyn Score,
    prior_score: &dyn Score,
    y_a: &[f64],
    a: f64,
    t: TimeIndex,
    eps: &[f64],
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<DistillationGrad> {
    weights.check_t(t)?;
    let (x_hat, trace) = phi.forward_traced(y_a, a, sched)?;
    let x_t = forward_marginal_sample(&x_hat, t, eps, sched)?;
    let delta = vecops::sub(
        &implicit_score.score(&x_t, t, sched),
        &prior_score.score(&x_t, t, sched),
    );
    let delta_s_sq = vecops::sq_norm(&delta);
    let w = weights.w_of_t(t, sched);
    let upstream = vecops::scale(&delta, w * sched.alpha_bar(t.0).sqrt());
    let (phi_grad, _) = phi.backward(&trace, &upstream);
    Ok(DistillationGrad {
        phi_grad,
        delta_s_sq,
    })
}

/// A time-dependent noise predictor, the eps-form counterpart of [`Score`].
pub trait NoisePredict {
    fn predict(&self, x: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64>;
}

impl<F> NoisePredict for F
where
    F: Fn(&[f64], TimeIndex, &NoiseSchedule) -> Vec<f64>,
{
    fn predict(&self, x: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64> {
        self(x, t, sched)
    }
}

/// Adapter viewing a score oracle in noise-prediction form:
/// `eps(x, t) = -sqrt(1 - alpha_bar_t) * score(x, t)`.
pub struct ScoreAsNoisePred<'a, S: Score + ?Sized>(pub &'a S);

impl<S: Score + ?Sized> NoisePredict for ScoreAsNoisePred<'_, S> {
    fn predict(&self, x: &[f64], t: TimeIndex, sched: &NoiseSchedule) -> Vec<f64> {
        let scale = -(1.0 - sched.alpha_bar(t.0)).sqrt();
        vecops::scale(&self.0.score(x, t, sched), scale)
    }
}

/// Per-sample distillation gradient when the surrogate posterior is the
/// Gaussian N(mu, sigma^2 I):
///
/// `x_t = sqrt(ab) mu + sqrt(ab sigma^2 + 1 - ab) eps`,
/// `g = w(t) * (-eps / sqrt(ab sigma^2 + 1 - ab) - s_prior(x_t, t)) * sqrt(ab)`.
///
/// At sigma = 0 this reduces exactly to [`dirac_sds_grad`].
pub fn gaussian_posterior_grad(
    mu: &[f64],
    sigma: f64,
    prior_score: &dyn Score,
    t: TimeIndex,
    eps: &[f64],
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter("sigma must be >= 0".into()));
    }
    if mu.len() != eps.len() {
        return Err(Error::Dimension(format!(
            "mu has length {}, eps has length {}",
            mu.len(),
            eps.len()
        )));
    }
    if t.0 < 1 || t.0 > sched.num_steps() {
        return Err(Error::Parameter(format!(
            "t = {} outside kernel range 1..={}",
            t.0,
            sched.num_steps()
        )));
    }
    let ab = sched.alpha_bar(t.0);
    let spread = (ab * sigma * sigma + 1.0 - ab).sqrt();
    let x_t: Vec<f64> = mu
        .iter()
        .zip(eps)
        .map(|(m, e)| ab.sqrt() * m + spread * e)
        .collect();
    let s_prior = prior_score.score(&x_t, t, sched);
    let w = weights.w_of_t(t, sched);
    Ok(eps
        .iter()
        .zip(&s_prior)
        .map(|(e, sp)| w * (-e / spread - sp) * ab.sqrt())
        .collect())
}

/// Per-sample score-distillation gradient for a point-mass surrogate at mu:
///
/// `x_t = sqrt(ab) mu + sqrt(1 - ab) eps`,
/// `g = w'(t) * (eps - eps_pred(x_t, t)) * sqrt(ab)`,  `w'(t) = -w(t) / sqrt(1 - ab)`.
///
/// Equals [`gaussian_posterior_grad`] at sigma = 0 sample for sample.
pub fn dirac_sds_grad(
    mu: &[f64],
    noise_pred: &dyn NoisePredict,
    t: TimeIndex,
    eps: &[f64],
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    if mu.len() != eps.len() {
        return Err(Error::Dimension(format!(
            "mu has length {}, eps has length {}",
            mu.len(),
            eps.len()
        )));
    }
    if t.0 < 1 || t.0 > sched.num_steps() {
        return Err(Error::Parameter(format!(
            "t = {} outside kernel range 1..={}",
            t.0,
            sched.num_steps()
        )));
    }
    let ab = sched.alpha_bar(t.0);
    let x_t: Vec<f64> = mu
        .iter()
        .zip(eps)
        .map(|(m, e)| ab.sqrt() * m + (1.0 - ab).sqrt() * e)
        .collect();
    let pred = noise_pred.predict(&x_t, t, sched);
    let w_prime = -weights.w_of_t(t, sched) / (1.0 - ab).sqrt();
    Ok(eps
        .iter()
        .zip(&pred)
        .map(|(e, p)| w_prime * (e - p) * ab.sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Activation;
    use crate::prior::GaussianMixturePrior;
    use crate::rng::SeededRng;

    fn weights() -> LossWeights {
        LossWeights {
            gamma: 1.0,
            reg_coeff: 0.25,
            ikl_t_max: 100,
            w_kind: WeightKind::Constant,
        }
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-3, 0.1).unwrap()
    }

    fn gaussian_measurement(y: Vec<f64>, op: &LinearOperator) -> Measurement {
        Measurement {
            y,
            sigma_y: 0.1,
            noise_kind: NoiseKind::Gaussian,
            operator_id: op.id(),
            poisson_clamp_count: 0,
        }
    }

    #[test]
    fn data_consistency_zero_at_fit() {
        let op = LinearOperator::identity(2).unwrap();
        let m = gaussian_measurement(vec![0.5, -0.5], &op);
        let vg = data_consistency(&[0.5, -0.5], &m, &op, &weights()).unwrap();
        assert_eq!(vg.value, 0.0);
        assert!(vg.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn data_consistency_identity_example() {
        let op = LinearOperator::identity(1).unwrap();
        let m = gaussian_measurement(vec![0.0], &op);
        let vg = data_consistency(&[1.0], &m, &op, &weights()).unwrap();
        assert_eq!(vg.value, 1.0);
        assert_eq!(vg.grad, vec![2.0]);
    }

    fn fd_check(
        f: impl Fn(&[f64]) -> f64,
        x: &[f64],
        grad: &[f64],
        rng: &mut SeededRng,
        dirs: usize,
        tol: f64,
    ) {
        let eps = 1e-5;
        for _ in 0..dirs {
            let mut v = rng.normal_vec(x.len());
            let n = vecops::norm2(&v);
            for vi in &mut v {
                *vi /= n;
            }
            let xp = vecops::add_scaled(x, eps, &v);
            let xm = vecops::add_scaled(x, -eps, &v);
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            let analytic = vecops::dot(grad, &v);
            let denom = fd.abs().max(analytic.abs()).max(1e-9);
            assert!(
                ((fd - analytic) / denom).abs() < tol,
                "fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn data_consistency_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(41);
        let op = LinearOperator::dense(vec![vec![1.0, 0.5], vec![-0.3, 0.8]]).unwrap();
        let w = weights();

        let m = gaussian_measurement(vec![0.7, -0.2], &op);
        let x = rng.normal_vec(2);
        let vg = data_consistency(&x, &m, &op, &w).unwrap();
        fd_check(
            |z| data_consistency(z, &m, &op, &w).unwrap().value,
            &x,
            &vg.grad,
            &mut rng,
            20,
            1e-7,
        );

        // poisson branch
        let mp = Measurement {
            y: vec![1.5, 2.5],
            sigma_y: 0.0,
            noise_kind: NoiseKind::Poisson,
            operator_id: op.id(),
            poisson_clamp_count: 0,
        };
        let vg = data_consistency(&x, &mp, &op, &w).unwrap();
        fd_check(
            |z| data_consistency(z, &mp, &op, &w).unwrap().value,
            &x,
            &vg.grad,
            &mut rng,
            20,
            1e-7,
        );
    }

    #[test]
    fn regularization_examples_and_gradient() {
        let w = weights();
        let vg = regularization(&[1.0, 2.0], &[1.0, 2.0], &w).unwrap();
        assert_eq!(vg.value, 0.0);

        // reg 0.25, ||diff||^2 = 4 -> 1
        let vg = regularization(&[2.0], &[0.0], &w).unwrap();
        assert_eq!(vg.value, 1.0);
        assert_eq!(vg.grad, vec![-2.0 * 0.25 * (0.0 - 2.0)]);

        let mut rng = SeededRng::new(5);
        let x = rng.normal_vec(3);
        let x0 = rng.normal_vec(3);
        let vg = regularization(&x, &x0, &w).unwrap();
        fd_check(
            |z| regularization(z, &x0, &w).unwrap().value,
            &x,
            &vg.grad,
            &mut rng,
            20,
            1e-7,
        );
    }

    #[test]
    fn score_matching_zero_loss_for_exact_net() {
        // With x0_hat = 0, x_t = sqrt(1 - ab) eps, so a linear net whose
        // x-block is I / sqrt(1 - ab) at this t predicts eps exactly.
        let s = sched();
        let t = TimeIndex(40);
        let ab = s.alpha_bar(40);
        let mut psi = ImplicitScoreNet::new(1, &[], Activation::Tanh, 2, 0).unwrap();
        // affine layer over [x, embed]: W = [1/sqrt(1-ab), 0, 0], b = 0
        psi.params_mut()[0] = 1.0 / (1.0 - ab).sqrt();
        let (loss, _) = score_matching_loss(&psi, &[0.0], t, &[0.8], &s, &weights()).unwrap();
        assert!(loss < 1e-24, "loss {loss}");
    }

    #[test]
    fn score_matching_zero_net_example() {
        // alpha_bar = 0.75, eps = 1 -> loss (1 / 0.5)^2 = 4
        let s = NoiseSchedule::from_betas(vec![0.25]).unwrap();
        let psi = ImplicitScoreNet::new(1, &[4], Activation::Silu, 2, 1).unwrap();
        let w = LossWeights {
            ikl_t_max: 1,
            ..weights()
        };
        let (loss, _) = score_matching_loss(&psi, &[0.0], TimeIndex(1), &[1.0], &s, &w).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn score_matching_gradient_matches_finite_differences() {
        let s = sched();
        let mut psi = ImplicitScoreNet::new(2, &[6], Activation::Tanh, 4, 3).unwrap();
        let mut rng = SeededRng::new(7);
        for p in psi.params_mut() {
            *p = 0.3 * rng.standard_normal();
        }
        let w = weights();
        let x0 = [0.4, -0.6];
        let t = TimeIndex(25);
        let eps = [0.9, -1.3];
        let (_, grads) = score_matching_loss(&psi, &x0, t, &eps, &s, &w).unwrap();

        let fd_eps = 1e-5;
        for _ in 0..30 {
            let mut v = rng.normal_vec(psi.num_params());
            let n = vecops::norm2(&v);
            for vi in &mut v {
                *vi /= n;
            }
            let mut plus = psi.clone();
            let mut minus = psi.clone();
            for i in 0..v.len() {
                plus.params_mut()[i] += fd_eps * v[i];
                minus.params_mut()[i] -= fd_eps * v[i];
            }
            let lp = score_matching_loss(&plus, &x0, t, &eps, &s, &w).unwrap().0;
            let lm = score_matching_loss(&minus, &x0, t, &eps, &s, &w).unwrap().0;
            let fd = (lp - lm) / (2.0 * fd_eps);
            let analytic = vecops::dot(&grads, &v);
            let denom = fd.abs().max(analytic.abs()).max(1e-9);
            assert!(((fd - analytic) / denom).abs() < 1e-5, "{fd} vs {analytic}");
        }
    }

    #[test]
    fn score_matching_rejects_t_outside_range() {
        let s = sched();
        let psi = ImplicitScoreNet::new(1, &[4], Activation::Silu, 2, 1).unwrap();
        let w = LossWeights {
            ikl_t_max: 10,
            ..weights()
        };
        assert!(score_matching_loss(&psi, &[0.0], TimeIndex(11), &[1.0], &s, &w).is_err());
        assert!(score_matching_loss(&psi, &[0.0], TimeIndex(0), &[1.0], &s, &w).is_err());
    }

    /// Point-mass surrogate: an affine map with zero weights so its bias IS
    /// the produced sample; at a = 0 the gate is 1 and d x_hat / d bias = I.
    fn dirac_surrogate(mu: &[f64]) -> AmortizedPosterior {
        let d = mu.len();
        let mut phi = AmortizedPosterior::new(d, &[], Activation::Tanh, 2, 0.0, 0).unwrap();
        let n = phi.num_params();
        phi.params_mut()[n - d..].copy_from_slice(mu);
        phi
    }

    fn bias_grad(phi: &AmortizedPosterior, grads: &[f64]) -> Vec<f64> {
        let d = phi.signal_dim();
        grads[grads.len() - d..].to_vec()
    }

    #[test]
    fn ikl_grad_zero_when_scores_agree() {
        let s = sched();
        let prior = GaussianMixturePrior::standard(2);
        let phi = dirac_surrogate(&[0.7, -0.4]);
        let g = ikl_grad_phi(
            &phi,
            &prior,
            &prior,
            &[0.0, 0.0],
            0.0,
            TimeIndex(30),
            &[0.5, -1.0],
            &s,
            &weights(),
        )
        .unwrap();
        assert_eq!(g.delta_s_sq, 0.0);
        assert!(g.phi_grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ikl_dirac_estimator_matches_closed_form_mean() {
        // Exact conditional score substituted for s_psi; the estimator's
        // mean over eps is alpha_bar * mu for a unit Gaussian prior.
        let s = sched();
        let prior = GaussianMixturePrior::standard(1);
        let mu = 2.0;
        let t = TimeIndex(50);
        let ab = s.alpha_bar(50);
        let phi = dirac_surrogate(&[mu]);
        let cond_score = move |x: &[f64], tt: TimeIndex, sc: &NoiseSchedule| {
            let abt = sc.alpha_bar(tt.0);
            x.iter()
                .map(|v| -(v - abt.sqrt() * mu) / (1.0 - abt))
                .collect()
        };
        let mut rng = SeededRng::new(77);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let eps = [rng.standard_normal()];
            let g = ikl_grad_phi(
                &phi,
                &cond_score,
                &prior,
                &[0.0],
                0.0,
                t,
                &eps,
                &s,
                &weights(),
            )
            .unwrap();
            let gb = bias_grad(&phi, &g.phi_grad)[0];
            sum += gb;
            sumsq += gb * gb;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        let expect = ab * mu;
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn ikl_consumes_scores_as_values() {
        // Wrapping the score net in a value-only closure must give the same
        // gradient: nothing differentiates through the score source.
        let s = sched();
        let prior = GaussianMixturePrior::standard(2);
        let mut psi = ImplicitScoreNet::new(2, &[6], Activation::Silu, 4, 5).unwrap();
        let mut rng = SeededRng::new(6);
        for p in psi.params_mut() {
            *p = 0.3 * rng.standard_normal();
        }
        let phi = dirac_surrogate(&[0.5, -0.2]);
        let frozen = psi.clone();
        let detached =
            move |x: &[f64], t: TimeIndex, sc: &NoiseSchedule| frozen.score_eval(x, t, sc).unwrap();
        let args = ([0.0, 0.0], 0.0, TimeIndex(12), [1.1, -0.3]);
        let live = ikl_grad_phi(
            &phi,
            &psi,
            &prior,
            &args.0,
            args.1,
            args.2,
            &args.3,
            &s,
            &weights(),
        )
        .unwrap();
        let detached = ikl_grad_phi(
            &phi,
            &detached,
            &prior,
            &args.0,
            args.1,
            args.2,
            &args.3,
            &s,
            &weights(),
        )
        .unwrap();
        assert_eq!(live.phi_grad, detached.phi_grad);
        assert_eq!(live.delta_s_sq, detached.delta_s_sq);
    }

    #[test]
    fn sds_equals_gaussian_grad_at_sigma_zero() {
        let s = sched();
        let prior = GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![-1.0, 0.5]],
            vec![vec![0.4, 0.7], vec![0.9, 0.3]],
        )
        .unwrap();
        let w = weights();
        let mut rng = SeededRng::new(13);
        for _ in 0..100 {
            let mu = rng.normal_vec(2);
            let eps = rng.normal_vec(2);
            let t = TimeIndex(1 + rng.below(100));
            let ga = gaussian_posterior_grad(&mu, 0.0, &prior, t, &eps, &s, &w).unwrap();
            let pred = ScoreAsNoisePred(&prior);
            let gd = dirac_sds_grad(&mu, &pred, t, &eps, &s, &w).unwrap();
            for (a, b) in ga.iter().zip(&gd) {
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "sigma = 0 mismatch: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn sds_zero_for_perfect_denoiser() {
        let s = sched();
        let w = weights();
        // predictor that returns the very eps used to build x_t
        let mu = [1.5];
        let t = TimeIndex(20);
        let eps = [0.77];
        let ab = s.alpha_bar(20);
        let xt_expected = ab.sqrt() * 1.5 + (1.0 - ab).sqrt() * 0.77;
        let perfect = move |x: &[f64], _t: TimeIndex, _s: &NoiseSchedule| {
            assert!((x[0] - xt_expected).abs() < 1e-12);
            vec![0.77]
        };
        let g = dirac_sds_grad(&mu, &perfect, t, &eps, &s, &w).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn gaussian_grad_expected_value_for_unit_prior() {
        // For prior N(0, 1) and sigma = 1 the diffused surrogate keeps unit
        // variance; the expected gradient is alpha_bar * mu.
        let s = sched();
        let prior = GaussianMixturePrior::standard(1);
        let w = weights();
        let mu = [-1.2];
        let t = TimeIndex(35);
        let ab = s.alpha_bar(35);
        let mut rng = SeededRng::new(29);
        let n = 50_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let eps = [rng.standard_normal()];
            let g = gaussian_posterior_grad(&mu, 1.0, &prior, t, &eps, &s, &w).unwrap()[0];
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - ab * mu[0]).abs() < 3.0 * se.max(1e-12),
            "mean {mean} vs {}",
            ab * mu[0]
        );
    }

    #[test]
    fn weighting_kind_scales_the_estimator() {
        let s = sched();
        let prior = GaussianMixturePrior::standard(1);
        let t = TimeIndex(40);
        let eps = [0.3];
        let mu = [0.9];
        let constant = gaussian_posterior_grad(
            &mu,
            0.5,
            &prior,
            t,
            &eps,
            &s,
            &LossWeights {
                w_kind: WeightKind::Constant,
                ..weights()
            },
        )
        .unwrap();
        let shaped = gaussian_posterior_grad(
            &mu,
            0.5,
            &prior,
            t,
            &eps,
            &s,
            &LossWeights {
                w_kind: WeightKind::InvSqrtOneMinusAlphaBar,
                ..weights()
            },
        )
        .unwrap();
        let factor = 1.0 / (1.0 - s.alpha_bar(40)).sqrt();
        assert!((shaped[0] - factor * constant[0]).abs() < 1e-12);
    }
}
