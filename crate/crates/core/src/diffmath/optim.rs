//! Adam and AdamW with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            weight_decay: 1e-2,
            ..Self::adam(lr)
        }
    }
}

/// Per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub hyper: AdamConfig,
}

impl OptimizerState {
    pub fn new(len: usize, hyper: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            hyper,
        }
    }
}

/// One optimizer step in place. AdamW shrinks the parameters by
/// `lr * weight_decay` before the moment update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return shape_err(format!(
            "adam_step: params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        ));
    }
    let h = state.hyper;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let decay = match h.kind {
        OptimizerKind::AdamW => h.lr * h.weight_decay,
        OptimizerKind::Adam => 0.0,
    };
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        if decay != 0.0 {
            params[i] -= decay * params[i];
        }
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = vec![0.25];
        let mut s = OptimizerState::new(1, AdamConfig::adam(5e-4));
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = 0.25 - 5e-4 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = OptimizerState::new(3, AdamConfig::adam(1e-2));
        s.first_moment = vec![0.0; 3];
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = vec![0.3, 0.7];
        let mut s = OptimizerState::new(2, AdamConfig { lr: 0.0, ..AdamConfig::adamw(1.0) });
        adam_step(&mut p, &[5.0, -1.0], &mut s).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn resumed_state_matches_fresh_copy() {
        let mut p = vec![0.1, 0.2, 0.3];
        let mut s = OptimizerState::new(3, AdamConfig::adamw(1e-3));
        adam_step(&mut p, &[0.5, -0.1, 2.0], &mut s).unwrap();
        let (mut p2, mut s2) = (p.clone(), s.clone());
        adam_step(&mut p, &[0.3, 0.3, -0.3], &mut s).unwrap();
        adam_step(&mut p2, &[0.3, 0.3, -0.3], &mut s2).unwrap();
        assert_eq!(p, p2);
        assert_eq!(s, s2);
    }

    #[test]
    fn adamw_applies_decoupled_decay() {
        let mut p = vec![2.0];
        let mut s = OptimizerState::new(1, AdamConfig::adamw(0.1));
        adam_step(&mut p, &[0.0], &mut s).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.1 * 1e-2)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        let mut s = OptimizerState::new(2, AdamConfig::adam(1e-3));
        assert!(adam_step(&mut p, &[1.0], &mut s).is_err());
    }
}
