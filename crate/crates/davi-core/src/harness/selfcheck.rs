//! Built-in oracle and identity checks behind the `check` CLI subcommand.
//! Fast versions of the oracle suite: each check recomputes its expected
//! value through an independent route.

use crate::diffusion::{
    forward_marginal_sample, reverse_sde_sample, transition_score, NoiseSchedule, TimeIndex,
};
use crate::losses::{
    dirac_sds_grad, gaussian_posterior_grad, LossWeights, ScoreAsNoisePred, WeightKind,
};
use crate::operators::LinearOperator;
use crate::ppb::{ppb_sample, sample_a, sigma_a, PpbConfig};
use crate::prior::GaussianMixturePrior;
use crate::rng::SeededRng;
use crate::vecops;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

/// Runs the whole battery; deterministic given the seed.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let sched = NoiseSchedule::linear(200, 1e-4, 0.02).expect("valid default schedule");
    let mut rng = SeededRng::new(seed);

    // adjoint identity across operator kinds
    {
        let ops = [
            LinearOperator::identity(6).unwrap(),
            LinearOperator::gaussian_blur(8, 5, 1.2).unwrap(),
            LinearOperator::avg_pool(8, 2).unwrap(),
            LinearOperator::box_mask(6, 2, 3).unwrap(),
            LinearOperator::grayscale(3, 4).unwrap(),
            LinearOperator::dense(vec![vec![1.0, 0.5], vec![-0.3, 0.9]]).unwrap(),
        ];
        let mut worst: f64 = 0.0;
        for op in &ops {
            for _ in 0..20 {
                let x = rng.normal_vec(op.in_dim());
                let y = rng.normal_vec(op.out_dim());
                let lhs = vecops::dot(&op.apply(&x).unwrap(), &y);
                let rhs = vecops::dot(&x, &op.adjoint(&y).unwrap());
                worst = worst.max((lhs - rhs).abs() / (vecops::norm2(&x) * vecops::norm2(&y)));
            }
        }
        out.push(check(
            "operator adjoint identity",
            worst <= 1e-10,
            format!("worst relative defect {worst:.2e}"),
        ));
    }

    // kernel round trip
    {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let x0 = rng.normal_vec(3);
            let eps = rng.normal_vec(3);
            let t = TimeIndex(1 + rng.below(200));
            let xt = forward_marginal_sample(&x0, t, &eps, &sched).unwrap();
            let sc = transition_score(&xt, &x0, t, &sched).unwrap();
            let denom = (1.0 - sched.alpha_bar(t.0)).sqrt();
            for (s, e) in sc.iter().zip(&eps) {
                worst = worst.max((s + e / denom).abs() / (e / denom).abs().max(1.0));
            }
        }
        out.push(check(
            "transition kernel round trip",
            worst <= 1e-12,
            format!("worst relative defect {worst:.2e}"),
        ));
    }

    // prior score vs finite differences
    {
        let prior = GaussianMixturePrior::new(
            vec![0.4, 0.6],
            vec![vec![1.0, -0.5], vec![-1.0, 0.5]],
            vec![vec![0.4, 0.8], vec![0.6, 0.3]],
        )
        .unwrap();
        let step = 1e-4;
        let mut worst: f64 = 0.0;
        for probe in 0..20 {
            let t = TimeIndex(probe * 10);
            let x = rng.normal_vec(2);
            let sc = prior.prior_score(&x, t, &sched);
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (prior.log_density_diffused(&xp, t, &sched)
                    - prior.log_density_diffused(&xm, t, &sched))
                    / (2.0 * step);
                worst = worst.max((fd - sc[i]).abs());
            }
        }
        out.push(check(
            "analytic prior score vs finite differences",
            worst <= 1e-6,
            format!("worst absolute defect {worst:.2e}"),
        ));
    }

    // bridge endpoints and monotonicity
    {
        let s0 = sigma_a(0.0, &sched).unwrap();
        let s1 = sigma_a(1.0, &sched).unwrap();
        let mut monotone = true;
        let mut prev = f64::INFINITY;
        for i in 0..=500 {
            let v = sigma_a(i as f64 / 500.0, &sched).unwrap();
            monotone &= v <= prev + 1e-15;
            prev = v;
        }
        out.push(check(
            "bridge mixing schedule endpoints and monotonicity",
            s0 == 1.0 && s1 == 0.0 && monotone,
            format!("sigma(0)={s0}, sigma(1)={s1}, monotone={monotone}"),
        ));

        let cfg = PpbConfig {
            h: 0.3,
            ..PpbConfig::default()
        };
        let x0 = [0.3, -0.6];
        let y = [1.0, 2.0];
        let at0 = ppb_sample(&y, &x0, 0.0, &cfg, &sched, &mut rng).unwrap();
        let mut probe = SeededRng::new(rng.state().seed ^ 0x77);
        let at1 = ppb_sample(&y, &x0, 1.0, &cfg, &sched, &mut probe).unwrap();
        let mut probe = SeededRng::new(rng.state().seed ^ 0x77);
        let expect1: Vec<f64> = y
            .iter()
            .map(|v| v + 0.3 * probe.standard_normal())
            .collect();
        out.push(check(
            "bridge boundary cases",
            at0 == x0.to_vec() && at1 == expect1,
            "a=0 returns the signal, a=1 returns measurement plus h z".into(),
        ));
    }

    // beta(3, 1) sampling moment
    {
        let cfg = PpbConfig::default();
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| sample_a(&cfg, &mut rng)).sum::<f64>() / n as f64;
        let bound = 4.0 * (3.0f64 / 80.0).sqrt() / (n as f64).sqrt();
        out.push(check(
            "bridge position sampling mean",
            (mean - 0.75).abs() < bound,
            format!("mean {mean:.4} vs 0.75 (bound {bound:.4})"),
        ));
    }

    // point-mass gradient equals the sigma = 0 Gaussian form
    {
        let prior = GaussianMixturePrior::standard(2);
        let w = LossWeights {
            gamma: 1.0,
            reg_coeff: 0.0,
            ikl_t_max: 200,
            w_kind: WeightKind::Constant,
        };
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let mu = rng.normal_vec(2);
            let eps = rng.normal_vec(2);
            let t = TimeIndex(1 + rng.below(200));
            let g = gaussian_posterior_grad(&mu, 0.0, &prior, t, &eps, &sched, &w).unwrap();
            let pred = ScoreAsNoisePred(&prior);
            let d = dirac_sds_grad(&mu, &pred, t, &eps, &sched, &w).unwrap();
            for (a, b) in g.iter().zip(&d) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
        out.push(check(
            "distillation gradient sigma-zero identity",
            worst <= 1e-12,
            format!("worst relative defect {worst:.2e}"),
        ));
    }

    // reverse-time sampler recovers the prior mean
    {
        let unit_score = |x: &[f64], _t: TimeIndex, _s: &NoiseSchedule| -> Vec<f64> {
            x.iter().map(|v| -v).collect()
        };
        let samples = reverse_sde_sample(&unit_score, &sched, 2, 512, seed ^ 0x5DE);
        let m = vecops::mean(&samples);
        let bound = 5.0 / (512.0f64).sqrt();
        out.push(check(
            "reverse-time sampler moment recovery",
            m.iter().all(|v| v.abs() < bound),
            format!("|mean| = [{:.3}, {:.3}] vs bound {bound:.3}", m[0], m[1]),
        ));
    }

    out
}
