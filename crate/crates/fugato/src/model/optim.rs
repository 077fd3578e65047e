//! Gradient clipping and the Adam optimizer.

use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelParams};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates (same shapes as the parameters) plus the step
/// counter used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(dims: ModelDims) -> Self {
        AdamState {
            first_moment: ModelParams::zeros(dims),
            second_moment: ModelParams::zeros(dims),
            step: 0,
        }
    }
}

/// Euclidean norm of all gradient entries taken together.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads
        .slices()
        .iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale the whole gradient so its global norm is at most `max_norm`.
///
/// Returns the norm before clipping. Gradients at or below the threshold
/// are untouched.
pub fn clip_gradients(grads: &mut ModelParams, max_norm: f64) -> Result<f64> {
    if !max_norm.is_finite() || max_norm <= 0.0 {
        return Err(Error::InvalidConfig(format!("clip norm {max_norm} must be positive")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for slice in grads.slices_mut() {
            for v in slice {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// One Adam update: advance the moments and apply the bias-corrected step
/// to `params` in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    config.validate()?;
    state.step += 1;
    let bias1 = 1.0 - config.beta1.powi(state.step as i32);
    let bias2 = 1.0 - config.beta2.powi(state.step as i32);

    let mut params = params.slices_mut();
    let grads = grads.slices();
    let mut first = state.first_moment.slices_mut();
    let mut second = state.second_moment.slices_mut();
    for t in 0..params.len() {
        let (p, g) = (&mut params[t], grads[t]);
        let (m, v) = (&mut first[t], &mut second[t]);
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlphabetDims, ModelConfig, ModelDims};

    fn small_dims() -> ModelDims {
        ModelDims {
            layer_sizes: [2, 2, 2],
            alphabets: AlphabetDims { timings: 2, durations: 2, pitches: 2 },
        }
    }

    fn constant_grads(dims: ModelDims, value: f64) -> ModelParams {
        let mut g = ModelParams::zeros(dims);
        for slice in g.slices_mut() {
            for v in slice {
                *v = value;
            }
        }
        g
    }

    #[test]
    fn global_norm_matches_hand_value() {
        let dims = small_dims();
        let g = constant_grads(dims, 2.0);
        let n = g.param_count() as f64;
        // Oracle: sqrt(sum of n entries of 4.0) = 2*sqrt(n).
        assert!((global_norm(&g) - 2.0 * n.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clipping_scales_only_when_needed() {
        let dims = small_dims();
        let mut g = constant_grads(dims, 2.0);
        let before = global_norm(&g);
        let reported = clip_gradients(&mut g, 1.0).unwrap();
        assert!((reported - before).abs() < 1e-12);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        // Direction preserved: all entries equal and positive.
        let slices = g.slices();
        let first = slices[0][0];
        assert!(first > 0.0);
        assert!(slices.iter().all(|s| s.iter().all(|&v| (v - first).abs() < 1e-15)));

        // Below the threshold: untouched, norm reported as-is.
        let mut small = constant_grads(dims, 1e-6);
        let norm = global_norm(&small);
        let reported = clip_gradients(&mut small, 1.0).unwrap();
        assert!((reported - norm).abs() < 1e-18);
        assert!(small.slices().iter().all(|s| s.iter().all(|&v| v == 1e-6)));

        assert!(clip_gradients(&mut small, 0.0).is_err());
        assert!(clip_gradients(&mut small, -1.0).is_err());
    }

    /// Scalar reference Adam, written independently of the implementation.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: u32,
    }

    impl ScalarAdam {
        fn step(&mut self, p: f64, g: f64, cfg: &AdamConfig) -> f64 {
            self.t += 1;
            self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g;
            self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m / (1.0 - cfg.beta1.powi(self.t as i32));
            let v_hat = self.v / (1.0 - cfg.beta2.powi(self.t as i32));
            p - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)
        }
    }

    #[test]
    fn adam_matches_scalar_reference_over_many_steps() {
        let dims = small_dims();
        let cfg = AdamConfig::default();
        let mut params = ModelParams::zeros(dims);
        let mut state = AdamState::new(dims);

        // Every entry gets the same gradient sequence, so each must follow
        // the scalar reference trajectory exactly.
        let grad_sequence = [0.3, -0.1, 0.25, 0.0, -0.4, 0.9, 0.05, -0.2];
        let mut reference = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
        let mut expected = 0.0;
        for g in grad_sequence {
            let grads = constant_grads(dims, g);
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            expected = reference.step(expected, g, &cfg);
        }
        assert_eq!(state.step, grad_sequence.len() as u64);
        for slice in params.slices() {
            for &p in slice {
                assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
            }
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        // With bias correction, the first step is lr * g/(|g| + eps'):
        // almost exactly lr in magnitude, signed like the gradient.
        let dims = small_dims();
        let cfg = AdamConfig::default();
        let mut params = ModelParams::zeros(dims);
        let mut state = AdamState::new(dims);
        let grads = constant_grads(dims, -0.7);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for slice in params.slices() {
            for &p in slice {
                assert!((p - cfg.learning_rate).abs() < 1e-6, "step {p}");
            }
        }
    }

    #[test]
    fn adam_rejects_bad_hyperparameters() {
        let dims = small_dims();
        let mut params = ModelParams::zeros(dims);
        let mut state = AdamState::new(dims);
        let grads = constant_grads(dims, 0.1);
        for cfg in [
            AdamConfig { learning_rate: 0.0, ..Default::default() },
            AdamConfig { learning_rate: f64::NAN, ..Default::default() },
            AdamConfig { beta1: 1.0, ..Default::default() },
            AdamConfig { beta2: -0.1, ..Default::default() },
            AdamConfig { epsilon: 0.0, ..Default::default() },
        ] {
            assert!(adam_step(&mut params, &grads, &mut state, &cfg).is_err());
        }
    }

    #[test]
    fn zeroed_config_dims_round_trip() {
        // AdamState shapes track the model parameters exactly.
        let config = ModelConfig {
            layer_sizes: [3, 4, 5],
            dropout_rate: 0.0,
            alphabets: AlphabetDims { timings: 4, durations: 3, pitches: 6 },
            seed: 0,
            aux_supervision: true,
        };
        let params = ModelParams::init(&config).unwrap();
        let state = AdamState::new(params.dims);
        assert_eq!(state.first_moment.param_count(), params.param_count());
        assert_eq!(state.second_moment.param_count(), params.param_count());
    }
}
