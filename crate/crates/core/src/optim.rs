//! SGD with momentum and Adam.
//!
//! SGD-momentum: `v <- mu * v - lr * g`, `p <- p + v`.
//! Adam: `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`,
//! `p <- p - lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected
//! `m_hat = m / (1 - b1^t)`, `v_hat = v / (1 - b2^t)`, `t` starting at 1.
//! Optimizer state is kept in `f64`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::model::Model;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd-momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown optimizer `{0}` (expected sgd-momentum or adam)")]
pub struct ParseOptimizerError(pub String);

impl FromStr for OptimizerKind {
    type Err = ParseOptimizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(ParseOptimizerError(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    /// Adam, lr 1e-3, betas (0.9, 0.999).
    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// SGD, lr 0.01, momentum 0.9.
    pub fn sgd_momentum() -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 0.01,
            ..Self::adam()
        }
    }

    pub fn for_kind(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(),
            OptimizerKind::SgdMomentum => Self::sgd_momentum(),
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("parameter {slot}: value has {value} entries, gradient {grad}")]
    GradShape {
        slot: usize,
        value: usize,
        grad: usize,
    },
    #[error("parameter {slot}: optimizer state has {state} entries, parameter {value}")]
    StateShape {
        slot: usize,
        state: usize,
        value: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every `(value, grad)` pair. Pairs are matched to their
    /// state by position, so the order must be the same on every call.
    pub fn step<T: Real>(&mut self, params: &mut [(&mut [T], &[T])]) -> Result<(), OptimError> {
        for (slot, (value, grad)) in params.iter().enumerate() {
            if value.len() != grad.len() {
                return Err(OptimError::GradShape {
                    slot,
                    value: value.len(),
                    grad: grad.len(),
                });
            }
            if let Some(state) = self.first.get(slot) {
                if state.len() != value.len() {
                    return Err(OptimError::StateShape {
                        slot,
                        state: state.len(),
                        value: value.len(),
                    });
                }
            }
        }
        while self.first.len() < params.len() {
            let n = params[self.first.len()].0.len();
            self.first.push(vec![0.0; n]);
            self.second.push(vec![0.0; n]);
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        for (slot, (value, grad)) in params.iter_mut().enumerate() {
            let m = &mut self.first[slot];
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    for ((p, g), v) in value.iter_mut().zip(grad.iter()).zip(m.iter_mut()) {
                        *v = c.momentum * *v - c.learning_rate * g.to_f64();
                        *p = T::from_f64(p.to_f64() + *v);
                    }
                }
                OptimizerKind::Adam => {
                    let v2 = &mut self.second[slot];
                    let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
                    let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
                    for (((p, g), m1), m2) in
                        value.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v2.iter_mut())
                    {
                        let g = g.to_f64();
                        *m1 = c.beta1 * *m1 + (1.0 - c.beta1) * g;
                        *m2 = c.beta2 * *m2 + (1.0 - c.beta2) * g * g;
                        let m_hat = *m1 / bc1;
                        let v_hat = *m2 / bc2;
                        *p = T::from_f64(
                            p.to_f64() - c.learning_rate * m_hat / (libm::sqrt(v_hat) + c.epsilon),
                        );
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies one step to every trainable tensor of `model` using the
    /// gradients stored by its last backward pass.
    pub fn step_model<T: Real>(&mut self, model: &mut Model<T>) -> Result<(), OptimError> {
        let mut slots = model.param_slots();
        let mut pairs: Vec<(&mut [T], &[T])> = slots
            .iter_mut()
            .map(|(_, s)| (s.value.data_mut(), s.grad.data()))
            .collect();
        self.step(&mut pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        for cfg in [OptimizerConfig::adam(), OptimizerConfig::sgd_momentum()] {
            let mut opt = Optimizer::new(cfg);
            let mut p = [1.5f64, -2.0];
            let g = [0.0f64; 2];
            opt.step(&mut [(&mut p[..], &g[..])]).unwrap();
            assert_eq!(p, [1.5, -2.0]);
        }
    }

    #[test]
    fn plain_sgd_step() {
        let cfg = OptimizerConfig {
            momentum: 0.0,
            learning_rate: 0.1,
            ..OptimizerConfig::sgd_momentum()
        };
        let mut opt = Optimizer::new(cfg);
        let mut p = [1.0f64, 2.0];
        let g = [0.5f64, -1.0];
        opt.step(&mut [(&mut p[..], &g[..])]).unwrap();
        assert_eq!(p, [1.0 - 0.1 * 0.5, 2.0 + 0.1]);
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = OptimizerConfig {
            learning_rate: 1.0,
            ..OptimizerConfig::sgd_momentum()
        };
        let mut opt = Optimizer::new(cfg);
        let mut p = [0.0f64];
        let g = [1.0f64];
        opt.step(&mut [(&mut p[..], &g[..])]).unwrap();
        assert_eq!(p, [-1.0]);
        opt.step(&mut [(&mut p[..], &g[..])]).unwrap();
        assert_eq!(p, [-1.0 - 1.9]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerConfig::adam());
        let mut p = [0.0f64, 0.0];
        let g = [3.0f64, -0.01];
        opt.step(&mut [(&mut p[..], &g[..])]).unwrap();
        // bias-corrected first step is lr * sign(g) up to epsilon
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            ..OptimizerConfig::adam()
        };
        let mut opt = Optimizer::new(cfg);
        let mut p = [1.0f64, -0.5, 0.25];
        for _ in 0..200 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [(&mut p[..], &g[..])]).unwrap();
        }
        let norm = libm::sqrt(p.iter().map(|v| v * v).sum::<f64>());
        assert!(norm < 1e-3, "{norm}");
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = Optimizer::new(OptimizerConfig::adam());
        let mut p = [0.0f64; 3];
        let g = [0.0f64; 2];
        assert!(matches!(
            opt.step(&mut [(&mut p[..], &g[..])]),
            Err(OptimError::GradShape { .. })
        ));
        let g3 = [0.0f64; 3];
        opt.step(&mut [(&mut p[..], &g3[..])]).unwrap();
        let mut q = [0.0f64; 4];
        let g4 = [0.0f64; 4];
        assert!(matches!(
            opt.step(&mut [(&mut q[..], &g4[..])]),
            Err(OptimError::StateShape { .. })
        ));
    }
}
