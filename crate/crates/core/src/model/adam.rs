use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 60,
        }
    }
}

/// Linear warmup to `base`, constant afterwards. `step` is 1-based.
pub fn warmup_lr(base: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        return base;
    }
    base * (step as f64 / warmup_steps as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let zeros: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> f64 {
        warmup_lr(self.config.lr, self.step + 1, self.config.warmup_steps)
    }
}

/// One bias-corrected Adam update. Returns the learning rate used.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut [&mut Matrix],
    grads: &[Matrix],
) -> Result<f64, ModelError> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(ModelError::ShapeMismatch {
            index: params.len().min(grads.len()),
            expected: (state.m.len(), 1),
            found: (params.len(), grads.len()),
        });
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.shape() != m.shape() || g.shape() != m.shape() {
            return Err(ModelError::ShapeMismatch {
                index: i,
                expected: m.shape(),
                found: if p.shape() != m.shape() { p.shape() } else { g.shape() },
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let lr = warmup_lr(c.lr, state.step, c.warmup_steps);
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let ps = p.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for (((pi, gi), mi), vi) in ps.iter_mut().zip(g.as_slice()).zip(ms.iter_mut()).zip(vs.iter_mut()) {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        assert!((warmup_lr(2e-4, 30, 60) - 1e-4).abs() < 1e-20);
        assert_eq!(warmup_lr(2e-4, 60, 60), 2e-4);
        assert_eq!(warmup_lr(2e-4, 600, 60), 2e-4);
        assert_eq!(warmup_lr(2e-4, 1, 0), 2e-4);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::new(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            adam_step(&mut st, &mut [&mut p], &[Matrix::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn scalar_sequence_matches_hand_computation() {
        let cfg = AdamConfig { lr: 0.1, warmup_steps: 0, ..Default::default() };
        let mut p = Matrix::scalar(1.0);
        let mut st = OptimizerState::new(cfg, [&p]);
        // constant gradient 1: m_t = 1 - 0.9^t, v_t = 1 - 0.999^t, so both
        // bias-corrected moments are exactly 1 and each step moves by lr/(1+eps)
        let mut expected = 1.0;
        let mut m = 0.0;
        let mut v = 0.0;
        for t in 1..=3 {
            adam_step(&mut st, &mut [&mut p], &[Matrix::scalar(1.0)]).unwrap();
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            expected -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.as_slice()[0] - expected).abs() < 1e-15);
        }
        assert!((p.as_slice()[0] - (1.0 - 0.3 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let p = Matrix::zeros(2, 2);
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        let mut q = Matrix::zeros(2, 3);
        assert!(matches!(
            adam_step(&mut st, &mut [&mut q], &[Matrix::zeros(2, 3)]),
            Err(ModelError::ShapeMismatch { .. })
        ));
        let mut p = p;
        assert!(adam_step(&mut st, &mut [&mut p], &[]).is_err());
    }
}
