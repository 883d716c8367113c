//! Bias-corrected Adam.

use super::AdError;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            moment1: vec![0.0; dim],
            moment2: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.moment1.len()
    }
}

/// One Adam update. Rejects non-finite gradients before touching any state.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
) -> Result<(), AdError> {
    if params.len() != state.dim() || grad.len() != state.dim() {
        return Err(AdError::DimMismatch {
            want: state.dim(),
            got: params.len().max(grad.len()),
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(AdError::NonFiniteGradient { index });
    }
    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.moment1[i] = c.beta1 * state.moment1[i] + (1.0 - c.beta1) * g;
        state.moment2[i] = c.beta2 * state.moment2[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.moment1[i] / bc1;
        let v_hat = state.moment2[i] / bc2;
        params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_advances_counter() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut params = vec![1.0, -2.0, 0.5];
        adam_step(&mut state, &mut params, &[0.0; 3]).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate() {
        // With fresh moments the bias corrections cancel and the update is
        // lr·g/(|g|+ε) ≈ lr·sign(g) for |g| ≫ ε.
        let lr = 0.01;
        let mut state = AdamState::new(2, AdamConfig::with_learning_rate(lr));
        let mut params = vec![0.0, 0.0];
        adam_step(&mut state, &mut params, &[3.0, -250.0]).unwrap();
        assert!((params[0] + lr).abs() < 1e-8 * lr);
        assert!((params[1] - lr).abs() < 1e-8 * lr);
    }

    #[test]
    fn sign_following_for_large_gradients() {
        let lr = 2e-3;
        for &g in &[1.0, 7.5, 4000.0, -1.0, -88.0] {
            let mut state = AdamState::new(1, AdamConfig::with_learning_rate(lr));
            let mut params = vec![0.0];
            adam_step(&mut state, &mut params, &[g]).unwrap();
            let expected = -g.signum() * lr;
            assert!(
                (params[0] - expected).abs() < 0.01 * lr,
                "update {} vs expected {expected}",
                params[0]
            );
        }
    }

    #[test]
    fn converges_on_a_shifted_quadratic() {
        // f(x) = (x−5)², f'(x) = 2(x−5); simulated from x = 0.
        let mut state = AdamState::new(1, AdamConfig::with_learning_rate(0.1));
        let mut x = vec![0.0];
        for _ in 0..200 {
            let g = 2.0 * (x[0] - 5.0);
            adam_step(&mut state, &mut x, &[g]).unwrap();
        }
        assert!((x[0] - 5.0).abs() < 0.1, "x = {}", x[0]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut params = vec![1.0, 2.0];
        let err = adam_step(&mut state, &mut params, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, AdError::NonFiniteGradient { index: 1 }));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(state.step_count(), 0);
    }
}
