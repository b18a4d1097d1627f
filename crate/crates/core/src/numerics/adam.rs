//! Adam with bias correction, over flat parameter vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param_count: usize, hyper: AdamHyper) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place; increments the step counter.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.first_moment.len() || grads.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam_step: params {} / grads {} / state {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient in adam_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = h.beta1 * state.first_moment[i] + (1.0 - h.beta1) * g;
        let v = h.beta2 * state.second_moment[i] + (1.0 - h.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut state = AdamState::new(3, AdamHyper::with_learning_rate(1e-3));
        let mut params = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn first_step_is_minus_lr() {
        // With g = 1: m̂ = 1, v̂ = 1 ⇒ Δ = −lr/(1+ε) ≈ −lr.
        let mut state = AdamState::new(1, AdamHyper::with_learning_rate(1e-3));
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[1.0]).unwrap();
        assert!((params[0] + 0.001).abs() < 1e-6, "got {}", params[0]);
    }

    #[test]
    fn non_finite_gradient_errors() {
        let mut state = AdamState::new(1, AdamHyper::with_learning_rate(1e-3));
        let mut params = vec![0.0];
        assert!(adam_step(&mut state, &mut params, &[f64::NAN]).is_err());
        assert!(adam_step(&mut state, &mut params, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn length_mismatch_errors() {
        let mut state = AdamState::new(2, AdamHyper::with_learning_rate(1e-3));
        let mut params = vec![0.0];
        assert!(adam_step(&mut state, &mut params, &[1.0]).is_err());
    }

    #[test]
    fn quadratic_converges() {
        // loss = θ²/2, grad = θ, θ0 = 1.
        let mut state = AdamState::new(1, AdamHyper::with_learning_rate(1e-2));
        let mut params = vec![1.0];
        for _ in 0..2000 {
            let g = params[0];
            adam_step(&mut state, &mut params, &[g]).unwrap();
        }
        assert!(params[0].abs() < 1e-2, "got {}", params[0]);
    }

    #[test]
    fn trajectory_matches_reference_update_rule() {
        // Independently coded textbook Adam, compared per step to 1e-12.
        let lr = 1e-3;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut state = AdamState::new(1, AdamHyper::with_learning_rate(lr));
        let mut params = vec![1.0];

        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=500 {
            let g = params[0];
            adam_step(&mut state, &mut params, &[g]).unwrap();

            let g_ref = theta;
            m = b1 * m + (1.0 - b1) * g_ref;
            v = b2 * v + (1.0 - b2) * g_ref * g_ref;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);

            assert!(
                (params[0] - theta).abs() < 1e-12,
                "step {t}: {} vs {}",
                params[0],
                theta
            );
        }
    }
}
