//! Closed-form preference likelihoods, the Gaussian KL term, latent
//! sampling and the KL weight schedule.

use crate::autodiff::{normal_cdf, sigmoid, SeededRng};
use crate::error::{Error, Result};
use crate::types::LatentPosterior;

/// Smallest standard deviation used anywhere a latent is sampled or scored.
pub const MIN_STDDEV: f64 = 1e-6;
pub const MAX_STDDEV: f64 = 10.0;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical(format!("NaN input to {what}")));
    }
    Ok(())
}

/// Bradley-Terry probability that the state with reward `ra` is preferred,
/// evaluated as `sigmoid(ra - rb)`.
pub fn btl_likelihood(ra: f64, rb: f64) -> Result<f64> {
    check_finite(&[ra, rb], "btl_likelihood")?;
    Ok(sigmoid(ra - rb))
}

/// Probit comparison of two Gaussian rewards.
pub fn dpl_meanvar_likelihood(mean_a: f64, std_a: f64, mean_b: f64, std_b: f64) -> Result<f64> {
    check_finite(&[mean_a, std_a, mean_b, std_b], "dpl_meanvar_likelihood")?;
    let scale = (std_a * std_a + std_b * std_b + 1e-8).sqrt();
    Ok(normal_cdf((mean_a - mean_b) / scale))
}

/// Centers of `n_bins` equal-width bins over `[r_min, r_max]`.
pub fn bin_centers(n_bins: usize, r_min: f64, r_max: f64) -> Vec<f64> {
    let w = (r_max - r_min) / n_bins as f64;
    (0..n_bins).map(|i| r_min + (i as f64 + 0.5) * w).collect()
}

/// `M[i][j] = 1(c_i > c_j) + 0.5 * 1(c_i == c_j)`, row-major.
pub fn comparison_matrix(centers: &[f64]) -> Vec<f64> {
    let n = centers.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if centers[i] > centers[j] {
                1.0
            } else if centers[i] == centers[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    m
}

/// Probability that a draw from bin distribution `pa` beats one from `pb`.
pub fn dpl_categorical_likelihood(pa: &[f64], pb: &[f64], centers: &[f64]) -> Result<f64> {
    if centers.len() < 2 {
        return Err(Error::contract(format!("categorical model needs at least 2 bins, got {}", centers.len())));
    }
    if pa.len() != centers.len() || pb.len() != centers.len() {
        return Err(Error::shape("dpl_categorical_likelihood", &[pa.len()], &[pb.len()]));
    }
    check_finite(pa, "dpl_categorical_likelihood")?;
    check_finite(pb, "dpl_categorical_likelihood")?;
    let m = comparison_matrix(centers);
    let n = centers.len();
    let mut p = 0.0;
    for i in 0..n {
        for j in 0..n {
            p += pa[i] * pb[j] * m[i * n + j];
        }
    }
    Ok(p)
}

/// `KL(q || p)` for diagonal Gaussians.
pub fn kl_diag_gaussians(q: &LatentPosterior, p: &LatentPosterior) -> Result<f64> {
    if q.dim() != p.dim() || q.stddev.len() != q.dim() || p.stddev.len() != p.dim() {
        return Err(Error::shape("kl_diag_gaussians", &[q.dim()], &[p.dim()]));
    }
    if q.stddev.iter().chain(&p.stddev).any(|s| !(*s > 0.0)) {
        return Err(Error::contract("kl_diag_gaussians needs positive standard deviations"));
    }
    let mut kl = 0.0;
    for j in 0..q.dim() {
        let (mq, sq, mp, sp) = (q.mean[j], q.stddev[j], p.mean[j], p.stddev[j]);
        let d = mq - mp;
        kl += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl.max(0.0))
}

/// Reparameterized draw `mean + stddev * eps` with `stddev` floored at
/// [`MIN_STDDEV`].
pub fn sample_latent(post: &LatentPosterior, rng: &mut SeededRng) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.stddev)
        .map(|(m, s)| m + s.max(MIN_STDDEV) * rng.normal())
        .collect()
}

/// Cyclical cosine KL weight: four cycles over training, each rising from 0
/// to `beta_max` and back.
pub fn beta_schedule(step: u64, total_steps: u64, beta_max: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::contract("beta_schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::contract(format!("step {step} exceeds total_steps {total_steps}")));
    }
    let period = total_steps as f64 / 4.0;
    let frac = (step as f64 % period) / period;
    Ok(beta_max * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * frac).cos()))
}
