//! Bernoulli likelihood and logistic helpers.

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Σ_i a_i ln p_i + (1−a_i) ln(1−p_i), with probabilities clamped to
/// [1e-7, 1−1e-7]. Targets must be exactly 0 or 1.
pub fn bernoulli_log_likelihood(probabilities: &[f64], targets: &[f64]) -> Result<f64> {
    if probabilities.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "bernoulli_log_likelihood: {} probabilities vs {} targets",
            probabilities.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &a) in probabilities.iter().zip(targets.iter()) {
        if a != 0.0 && a != 1.0 {
            return Err(Error::Domain(format!("non-binary target {a}")));
        }
        let p = clamp_prob(p);
        total += a * p.ln() + (1.0 - a) * (1.0 - p).ln();
    }
    Ok(total)
}

/// Same quantity computed stably from logits:
/// Σ_i a_i ln σ(l_i) + (1−a_i) ln(1−σ(l_i)).
pub fn bernoulli_log_likelihood_from_logits(logits: &[f64], targets: &[f64]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "bernoulli_log_likelihood_from_logits: {} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (&l, &a) in logits.iter().zip(targets.iter()) {
        if a != 0.0 && a != 1.0 {
            return Err(Error::Domain(format!("non-binary target {a}")));
        }
        total += -a * softplus(-l) - (1.0 - a) * softplus(l);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    #[test]
    fn uniform_half_probability() {
        let n = 17;
        let p = vec![0.5; n];
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let ll = bernoulli_log_likelihood(&p, &a).unwrap();
        assert!((ll - n as f64 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_match_hits_clamp_bound() {
        let n = 5;
        let p = vec![1.0; n];
        let a = vec![1.0; n];
        let ll = bernoulli_log_likelihood(&p, &a).unwrap();
        assert!((ll - n as f64 * (1.0 - 1e-7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_resummation_oracle() {
        let mut rng = RngStream::new(2, "bll");
        for _ in 0..20 {
            let n = 1 + rng.below(30);
            let p: Vec<f64> = (0..n).map(|_| rng.uniform(0.01, 0.99)).collect();
            let a: Vec<f64> = (0..n).map(|_| (rng.below(2)) as f64).collect();
            let ll = bernoulli_log_likelihood(&p, &a).unwrap();
            // Independent summation in reverse index order.
            let mut oracle = 0.0;
            for i in (0..n).rev() {
                oracle += if a[i] == 1.0 {
                    p[i].ln()
                } else {
                    (1.0 - p[i]).ln()
                };
            }
            assert!((ll - oracle).abs() <= 1e-12, "{ll} vs {oracle}");
        }
    }

    #[test]
    fn logit_form_agrees_with_probability_form() {
        let mut rng = RngStream::new(3, "bll-logit");
        for _ in 0..20 {
            let n = 1 + rng.below(20);
            let logits: Vec<f64> = (0..n).map(|_| rng.uniform(-8.0, 8.0)).collect();
            let p: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
            let a: Vec<f64> = (0..n).map(|_| (rng.below(2)) as f64).collect();
            let from_p = bernoulli_log_likelihood(&p, &a).unwrap();
            let from_l = bernoulli_log_likelihood_from_logits(&logits, &a).unwrap();
            assert!((from_p - from_l).abs() < 1e-10, "{from_p} vs {from_l}");
        }
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(bernoulli_log_likelihood(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn non_binary_target_errors() {
        assert!(bernoulli_log_likelihood(&[0.5], &[0.3]).is_err());
    }
}
