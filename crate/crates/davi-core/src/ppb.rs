//! Perturbed posterior bridge between a lifted measurement and a clean signal.
//!
//! A bridge position a in [0, 1] mixes the two endpoints through sigma_a,
//! the normalized tail mass of the beta schedule, and adds a perturbation
//! whose scale follows sigma_bar_a. a = 0 sits at the clean signal, a = 1 at
//! the measurement, matching the boundary cases of the piecewise definition
//! exactly.

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaBarKind {
    /// 1 - alpha_bar at the quantized bridge position; grows toward a = 1.
    #[default]
    MonotoneIncreasing,
    Constant,
}

/// Mid-bridge noise scale. `Scheduled` uses h * sigma_bar_a; `Bridge` adds
/// the bridge variance term sigma_a (1 - sigma_a) on top. The two families
/// coincide at the endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariant {
    #[default]
    Scheduled,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpbConfig {
    pub h: f64,
    #[serde(default)]
    pub sigma_bar_kind: SigmaBarKind,
    /// Shape parameters of the Beta distribution for a.
    pub a_shape: (f64, f64),
    #[serde(default)]
    pub noise_variant: NoiseVariant,
}

impl Default for PpbConfig {
    fn default() -> Self {
        PpbConfig {
            h: 0.01,
            sigma_bar_kind: SigmaBarKind::MonotoneIncreasing,
            a_shape: (3.0, 1.0),
            noise_variant: NoiseVariant::Scheduled,
        }
    }
}

impl PpbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h >= 0.0) {
            return Err(Error::Parameter("h must be >= 0".into()));
        }
        if !(self.a_shape.0 > 0.0 && self.a_shape.1 > 0.0) {
            return Err(Error::Parameter("beta shape parameters must be > 0".into()));
        }
        Ok(())
    }
}

fn check_unit_interval(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Parameter(format!("a must lie in [0, 1], got {a}")));
    }
    Ok(())
}

/// Normalized tail mass of the beta schedule:
/// `sigma_a = (sum of beta over (a, 1]) / (sum over all steps)`, with linear
/// interpolation inside the fractional step. sigma_0 = 1 and sigma_1 = 0
/// exactly; weakly decreasing in between.
pub fn sigma_a(a: f64, sched: &NoiseSchedule) -> Result<f64> {
    check_unit_interval(a)?;
    let betas = sched.betas();
    let total: f64 = betas.iter().sum();
    let pos = a * betas.len() as f64;
    let whole = (pos.floor() as usize).min(betas.len());
    let frac = pos - whole as f64;
    let mut head: f64 = betas[..whole].iter().sum();
    if whole < betas.len() {
        head += frac * betas[whole];
    }
    Ok(((total - head) / total).clamp(0.0, 1.0))
}

/// Perturbation schedule along the bridge. sigma_bar_0 = 0 for the monotone
/// kind since alpha_bar_0 = 1.
pub fn sigma_bar(a: f64, sched: &NoiseSchedule, kind: SigmaBarKind) -> f64 {
    match kind {
        SigmaBarKind::MonotoneIncreasing => 1.0 - sched.alpha_bar_at_frac(a.clamp(0.0, 1.0)),
        SigmaBarKind::Constant => 1.0,
    }
}

/// Draws a bridge position a ~ Beta(shape.0, shape.1).
pub fn sample_a(cfg: &PpbConfig, rng: &mut SeededRng) -> f64 {
    let beta = rand_distr::Beta::new(cfg.a_shape.0, cfg.a_shape.1)
        .expect("shape parameters validated positive");
    rand_distr::Distribution::sample(&beta, rng.inner())
}

/// Draws the intermediary input
/// `y_a = (1 - sigma_a) y + sigma_a x0 + noise_scale * z`.
///
/// The endpoints follow the piecewise definition bit-exactly: a = 0 returns
/// x0 itself, a = 1 returns y + h z.
pub fn ppb_sample(
    y_lifted: &[f64],
    x0: &[f64],
    a: f64,
    cfg: &PpbConfig,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    check_unit_interval(a)?;
    if y_lifted.len() != x0.len() {
        return Err(Error::Dimension(format!(
            "lifted measurement has length {}, x0 has length {}",
            y_lifted.len(),
            x0.len()
        )));
    }
    if a == 0.0 {
        return Ok(x0.to_vec());
    }
    if a == 1.0 {
        return Ok(y_lifted
            .iter()
            .map(|y| y + cfg.h * rng.standard_normal())
            .collect());
    }
    let s = sigma_a(a, sched)?;
    let sbar = sigma_bar(a, sched, cfg.sigma_bar_kind);
    let noise_scale = match cfg.noise_variant {
        NoiseVariant::Scheduled => cfg.h * sbar,
        NoiseVariant::Bridge => s * (1.0 - s) + cfg.h * sbar,
    };
    Ok(y_lifted
        .iter()
        .zip(x0)
        .map(|(y, x)| (1.0 - s) * y + s * x + noise_scale * rng.standard_normal())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn sigma_a_endpoints_exact() {
        let s = default_sched();
        assert_eq!(sigma_a(0.0, &s).unwrap(), 1.0);
        assert_eq!(sigma_a(1.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn sigma_a_midpoint_matches_schedule_integral() {
        // Numerical integration of the linear schedule puts sigma at a = 0.5
        // near 0.7475; the discrete partial sum must land within 1e-3.
        let s = default_sched();
        let v = sigma_a(0.5, &s).unwrap();
        assert!((v - 0.7475).abs() < 1e-3, "sigma_a(0.5) = {v}");

        // Independent route: trapezoid on the continuous interpolant.
        let n = 100_000;
        let beta = |u: f64| 1e-4 + (0.02 - 1e-4) * u;
        let integral = |lo: f64, hi: f64| {
            let m = ((hi - lo) * n as f64).round() as usize;
            (0..m)
                .map(|i| beta(lo + (i as f64 + 0.5) * (hi - lo) / m as f64))
                .sum::<f64>()
                * (hi - lo)
                / m as f64
        };
        let cont = integral(0.5, 1.0) / integral(0.0, 1.0);
        assert!((v - cont).abs() < 1e-3, "discrete {v} vs continuous {cont}");
    }

    #[test]
    fn sigma_a_weakly_decreasing_on_dense_grid() {
        let s = default_sched();
        let mut prev = f64::INFINITY;
        for i in 0..=2000 {
            let a = i as f64 / 2000.0;
            let v = sigma_a(a, &s).unwrap();
            assert!(v <= prev + 1e-15, "not decreasing at a = {a}");
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn sigma_a_rejects_out_of_range() {
        let s = default_sched();
        assert!(sigma_a(-0.1, &s).is_err());
        assert!(sigma_a(1.1, &s).is_err());
    }

    #[test]
    fn sigma_bar_monotone_kind() {
        let s = default_sched();
        assert_eq!(sigma_bar(0.0, &s, SigmaBarKind::MonotoneIncreasing), 0.0);
        let terminal = sigma_bar(1.0, &s, SigmaBarKind::MonotoneIncreasing);
        assert!((terminal - (1.0 - s.alpha_bar(1000))).abs() < 1e-15);
        assert!(terminal > 0.9999 && terminal < 1.0, "terminal = {terminal}");

        let mut prev = -1.0;
        for i in 0..=500 {
            let a = i as f64 / 500.0;
            let v = sigma_bar(a, &s, SigmaBarKind::MonotoneIncreasing);
            assert!(v >= prev - 1e-15, "not increasing at a = {a}");
            prev = v;
        }
    }

    #[test]
    fn sigma_bar_constant_kind() {
        let s = default_sched();
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(sigma_bar(a, &s, SigmaBarKind::Constant), 1.0);
        }
    }

    #[test]
    fn sample_a_uniform_case() {
        let cfg = PpbConfig {
            a_shape: (1.0, 1.0),
            ..PpbConfig::default()
        };
        let mut rng = SeededRng::new(100);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_a(&cfg, &mut rng)).sum::<f64>() / n as f64;
        // uniform: mean 1/2, sd 1/sqrt(12)
        let bound = 3.0 / (12.0f64 * n as f64).sqrt();
        assert!((mean - 0.5).abs() < bound, "mean {mean}");
    }

    #[test]
    fn sample_a_cubed_density_case() {
        // Beta(3, 1) has density 3 a^2: mean 3/4 and P(a > 0.9) = 1 - 0.9^3.
        let cfg = PpbConfig::default();
        let mut rng = SeededRng::new(200);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_a(&cfg, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (3.0f64 / 80.0).sqrt();
        assert!(
            (mean - 0.75).abs() < 3.0 * sd / (n as f64).sqrt(),
            "mean {mean}"
        );

        let p_tail = draws.iter().filter(|a| **a > 0.9).count() as f64 / n as f64;
        let p_true = 1.0 - 0.9f64.powi(3);
        let bound = 3.0 * (p_true * (1.0 - p_true) / n as f64).sqrt();
        assert!((p_tail - p_true).abs() < bound, "tail {p_tail} vs {p_true}");
        assert!(draws.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn bridge_boundaries_bit_exact() {
        let s = default_sched();
        let cfg = PpbConfig {
            h: 0.7,
            ..PpbConfig::default()
        };
        let y = [1.0, -3.0];
        let x0 = [0.25, 0.5];

        let mut rng = SeededRng::new(1);
        assert_eq!(ppb_sample(&y, &x0, 0.0, &cfg, &s, &mut rng).unwrap(), x0);

        // a = 1 must equal y + h z for the same noise draw
        let mut rng = SeededRng::new(2);
        let got = ppb_sample(&y, &x0, 1.0, &cfg, &s, &mut rng).unwrap();
        let mut rng = SeededRng::new(2);
        let expect: Vec<f64> = y.iter().map(|v| v + 0.7 * rng.standard_normal()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn noiseless_bridge_lies_on_segment() {
        let s = default_sched();
        let cfg = PpbConfig {
            h: 0.0,
            ..PpbConfig::default()
        };
        let y = [2.0];
        let x0 = [-1.0];
        let mut rng = SeededRng::new(3);
        for i in 1..20 {
            let a = i as f64 / 20.0;
            let v = ppb_sample(&y, &x0, a, &cfg, &s, &mut rng).unwrap()[0];
            let again = ppb_sample(&y, &x0, a, &cfg, &s, &mut rng).unwrap()[0];
            assert_eq!(v, again, "h = 0 must be deterministic");
            assert!((-1.0..=2.0).contains(&v), "off segment at a = {a}");
            // exactly the sigma_a mix
            let sig = sigma_a(a, &s).unwrap();
            assert!((v - ((1.0 - sig) * 2.0 - sig)).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_midpoint_example() {
        let s = default_sched();
        let cfg = PpbConfig {
            h: 0.0,
            ..PpbConfig::default()
        };
        let mut rng = SeededRng::new(4);
        let v = ppb_sample(&[1.0], &[0.0], 0.5, &cfg, &s, &mut rng).unwrap()[0];
        let sig = sigma_a(0.5, &s).unwrap();
        assert!((v - (1.0 - sig)).abs() < 1e-15);
        assert!((v - 0.2525).abs() < 1e-3, "midpoint {v}");
    }

    #[test]
    fn bridge_variant_noise_scale() {
        // With h = 0 the bridge variant still has mid-bridge noise while the
        // scheduled variant is exactly deterministic.
        let s = default_sched();
        let scheduled = PpbConfig {
            h: 0.0,
            noise_variant: NoiseVariant::Scheduled,
            ..PpbConfig::default()
        };
        let bridge = PpbConfig {
            h: 0.0,
            noise_variant: NoiseVariant::Bridge,
            ..PpbConfig::default()
        };
        let y = [1.0];
        let x0 = [0.0];
        let mut r1 = SeededRng::new(5);
        let mut r2 = SeededRng::new(6);
        let a = 0.5;
        assert_eq!(
            ppb_sample(&y, &x0, a, &scheduled, &s, &mut r1).unwrap(),
            ppb_sample(&y, &x0, a, &scheduled, &s, &mut r2).unwrap()
        );
        let mut r1 = SeededRng::new(5);
        let mut r2 = SeededRng::new(6);
        assert_ne!(
            ppb_sample(&y, &x0, a, &bridge, &s, &mut r1).unwrap(),
            ppb_sample(&y, &x0, a, &bridge, &s, &mut r2).unwrap()
        );
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        // endpoints are exact and the mixing weight decreases for any valid
        // linear schedule
        #[test]
        fn prop_sigma_a_shape(
            steps in 1usize..300,
            beta_min in 1e-5f64..0.05,
            spread in 0.0f64..0.4,
            a1 in 0.0f64..1.0,
            a2 in 0.0f64..1.0,
        ) {
            let sched = NoiseSchedule::linear(steps, beta_min, beta_min + spread).unwrap();
            prop_assert_eq!(sigma_a(0.0, &sched).unwrap(), 1.0);
            prop_assert_eq!(sigma_a(1.0, &sched).unwrap(), 0.0);
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let s_lo = sigma_a(lo, &sched).unwrap();
            let s_hi = sigma_a(hi, &sched).unwrap();
            prop_assert!(s_hi <= s_lo + 1e-15);
            prop_assert!((0.0..=1.0).contains(&s_lo));
        }

        // with no perturbation the bridge stays on the segment between the
        // endpoints at every interior position
        #[test]
        fn prop_noiseless_bridge_on_segment(
            y in -5.0f64..5.0,
            x0 in -5.0f64..5.0,
            a in 0.0f64..1.0,
        ) {
            let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
            let cfg = PpbConfig { h: 0.0, ..PpbConfig::default() };
            let mut rng = SeededRng::new(0);
            let v = ppb_sample(&[y], &[x0], a, &cfg, &sched, &mut rng).unwrap()[0];
            let (lo, hi) = if y <= x0 { (y, x0) } else { (x0, y) };
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
