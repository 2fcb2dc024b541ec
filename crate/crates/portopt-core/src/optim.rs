//! First-order parameter updates for the training loop.

use alloc::vec::Vec;

use num_traits::Float;

/// Which update rule drives the pre-weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Gd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

pub enum Optimizer {
    Gd { learning_rate: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Gd => Optimizer::Gd { learning_rate },
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(learning_rate, n_params)),
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Gd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= *learning_rate * g;
                }
            }
            Optimizer::Adam(state) => state.update(params, grads),
        }
    }
}

/// Adam with bias correction.
pub struct AdamState {
    learning_rate: f64,
    step: u32,
    /// First moment (running mean of gradients).
    m: Vec<f64>,
    /// Second moment (running mean of squared gradients).
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        AdamState {
            learning_rate,
            step: 0,
            m: alloc::vec![0.0; n_params],
            v: alloc::vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - Float::powi(ADAM_BETA1, self.step as i32);
        let bc2 = 1.0 - Float::powi(ADAM_BETA2, self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (Float::sqrt(v_hat) + ADAM_EPSILON);
        }
    }
}
