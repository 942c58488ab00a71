//! Evaluation metrics: PSNR against the clean signal and distances between
//! the amortized sample cloud and the exact posterior.

use crate::error::{Error, Result};
use crate::prior::GaussianPosterior;
use crate::rng::{derive_seed, SeededRng};
use crate::vecops;

/// Peak signal-to-noise ratio in dB. A zero MSE yields the +infinity
/// sentinel, which the report layer serializes as "inf".
pub fn psnr(x_hat: &[f64], x0: &[f64], peak: f64) -> Result<f64> {
    if x_hat.len() != x0.len() {
        return Err(Error::Dimension(format!(
            "x_hat has length {}, x0 has length {}",
            x_hat.len(),
            x0.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Parameter("peak must be > 0".into()));
    }
    let mse = vecops::sq_norm(&vecops::sub(x_hat, x0)) / x0.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Sliced Wasserstein-1 distance between two equally sized sample sets:
/// samples are projected onto `projections` random unit directions drawn
/// from `rng_seed`, sorted, and compared coordinate-wise.
pub fn sliced_w1(a: &[Vec<f64>], b: &[Vec<f64>], projections: usize, rng_seed: u64) -> f64 {
    assert_eq!(a.len(), b.len(), "sample sets must have equal size");
    assert!(!a.is_empty(), "sample sets must be nonempty");
    let dim = a[0].len();
    let mut rng = SeededRng::new(rng_seed);
    let mut total = 0.0;
    for _ in 0..projections {
        let mut dir = rng.normal_vec(dim);
        let norm = vecops::norm2(&dir).max(f64::MIN_POSITIVE);
        for d in &mut dir {
            *d /= norm;
        }
        let mut pa: Vec<f64> = a.iter().map(|s| vecops::dot(s, &dir)).collect();
        let mut pb: Vec<f64> = b.iter().map(|s| vecops::dot(s, &dir)).collect();
        pa.sort_by(|x, y| x.partial_cmp(y).expect("finite projections"));
        pb.sort_by(|x, y| x.partial_cmp(y).expect("finite projections"));
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / pa.len() as f64;
    }
    total / projections as f64
}

/// Distances between an amortized sample cloud and the exact posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorDistance {
    /// l2 distance between the sample mean and the posterior mean.
    pub mean_err: f64,
    /// l2 distance between per-coordinate sample stds and posterior stds.
    pub std_err: f64,
    /// Sliced W1 against a matched number of exact posterior samples.
    pub swd: f64,
}

pub fn posterior_distance(
    samples: &[Vec<f64>],
    posterior: &GaussianPosterior,
    rng_seed: u64,
    projections: usize,
) -> Result<PosteriorDistance> {
    if samples.len() < 2 {
        return Err(Error::Parameter(
            "posterior distance needs at least 2 samples".into(),
        ));
    }
    if samples.iter().any(|s| s.len() != posterior.dim()) {
        return Err(Error::Dimension(
            "sample dimension does not match the posterior".into(),
        ));
    }
    let mean_err = vecops::norm2(&vecops::sub(&vecops::mean(samples), &posterior.mean()));
    let std_err = vecops::norm2(&vecops::sub(
        &vecops::std_per_coord(samples),
        &posterior.marginal_std(),
    ));
    let mut rng = SeededRng::new(derive_seed(rng_seed, 0xE2AC));
    let exact = posterior.sample(samples.len(), &mut rng);
    let swd = sliced_w1(samples, &exact, projections, derive_seed(rng_seed, 0x51CE));
    Ok(PosteriorDistance {
        mean_err,
        std_err,
        swd,
    })
}
