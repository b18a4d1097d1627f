//! Diagonal Gaussians: reparameterized sampling and closed-form KL.

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

/// Mean vector plus strictly positive per-dimension variances.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::Dimension(format!(
                "gaussian mean length {} != variance length {}",
                mean.len(),
                variance.len()
            )));
        }
        if variance.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("nonpositive or non-finite variance".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric("non-finite mean".into()));
        }
        Ok(DiagonalGaussian { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }
}

/// mean + sqrt(variance) ⊙ ε with ε ~ N(0, I).
pub fn sample_reparam(g: &DiagonalGaussian, rng: &mut RngStream) -> Vec<f64> {
    sample_reparam_with_noise(g, rng).0
}

/// As [`sample_reparam`] but also returns the noise draw, which the ELBO
/// backward pass needs to route gradients through the sample.
pub fn sample_reparam_with_noise(
    g: &DiagonalGaussian,
    rng: &mut RngStream,
) -> (Vec<f64>, Vec<f64>) {
    let noise: Vec<f64> = (0..g.dim()).map(|_| rng.standard_normal()).collect();
    let sample = apply_noise(g, &noise);
    (sample, noise)
}

/// Deterministic reparameterization for a fixed noise vector.
pub fn apply_noise(g: &DiagonalGaussian, noise: &[f64]) -> Vec<f64> {
    g.mean
        .iter()
        .zip(g.variance.iter())
        .zip(noise.iter())
        .map(|((&m, &v), &e)| m + v.sqrt() * e)
        .collect()
}

/// Closed-form KL(q ‖ p) for diagonal Gaussians:
/// ½ Σ_d [ v_q/v_p + (μ_q−μ_p)²/v_p − 1 + ln(v_p/v_q) ].
pub fn kl_diag_gaussians(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Dimension(format!(
            "kl: dimensions {} vs {}",
            q.dim(),
            p.dim()
        )));
    }
    let mut total = 0.0;
    for d in 0..q.dim() {
        let vq = q.variance[d];
        let vp = p.variance[d];
        let dm = q.mean[d] - p.mean[d];
        total += 0.5 * (vq / vp + dm * dm / vp - 1.0 + (vp / vq).ln());
    }
    Ok(total)
}

/// Log density of a diagonal Gaussian at `x` (used by Monte-Carlo KL oracles
/// and the ELBO bound test).
pub fn log_density(g: &DiagonalGaussian, x: &[f64]) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::Dimension(format!(
            "log_density: point length {} != dim {}",
            x.len(),
            g.dim()
        )));
    }
    const LN_2PI: f64 = 1.8378770664093453;
    let mut total = 0.0;
    for d in 0..g.dim() {
        let v = g.variance[d];
        let dm = x[d] - g.mean[d];
        total += -0.5 * (LN_2PI + v.ln() + dm * dm / v);
    }
    Ok(total)
}
