use serde::{Deserialize, Serialize};

use super::{GradientEstimate, Result};
use crate::linalg::Matrix;
use crate::model::NetworkParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam { lr: f64 },
    Sgd { lr: f64, momentum: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr } | OptimizerKind::Sgd { lr, .. } => lr,
        }
    }
}

/// Optimizer hyperparameters plus per-weight moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &NetworkParams) -> Self {
        let zeros = || params.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        OptimizerState {
            kind,
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one descent step with `grad` to `params`.
    pub fn step(&mut self, params: &mut NetworkParams, grad: &GradientEstimate) -> Result<()> {
        grad.check_shapes(params)?;
        self.steps += 1;
        match self.kind {
            OptimizerKind::Adam { lr } => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (k, w) in params.weights_mut().iter_mut().enumerate() {
                    let g = grad.layers()[k].as_slice();
                    let m = self.first[k].as_mut_slice();
                    let v = self.second[k].as_mut_slice();
                    for (i, wi) in w.as_mut_slice().iter_mut().enumerate() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        *wi -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            OptimizerKind::Sgd {
                lr,
                momentum,
                weight_decay,
            } => {
                for (k, w) in params.weights_mut().iter_mut().enumerate() {
                    let g = grad.layers()[k].as_slice();
                    let buf = self.first[k].as_mut_slice();
                    for (i, wi) in w.as_mut_slice().iter_mut().enumerate() {
                        buf[i] = momentum * buf[i] + g[i] + weight_decay * *wi;
                        *wi -= lr * buf[i];
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn optimizer_step(opt: &mut OptimizerState, params: &mut NetworkParams, grad: &GradientEstimate) -> Result<()> {
    opt.step(params, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActivationKind, BiasMode, LayerSpec};

    fn one_weight(w: f64) -> NetworkParams {
        NetworkParams::new(
            vec![LayerSpec::new(1, 1, ActivationKind::Identity)],
            vec![Matrix::from_rows(&[vec![w]])],
            BiasMode::Off,
        )
        .unwrap()
    }

    fn grad(g: f64) -> GradientEstimate {
        GradientEstimate::new(vec![Matrix::from_rows(&[vec![g]])])
    }

    #[test]
    fn adam_first_step() {
        let mut p = one_weight(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::Adam { lr: 0.001 }, &p);
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert!((p.weights()[0][(0, 0)] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut p = one_weight(0.0);
        let kind = OptimizerKind::Sgd {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut opt = OptimizerState::new(kind, &p);
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert!((p.weights()[0][(0, 0)] + 0.1).abs() < 1e-15);
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert!((p.weights()[0][(0, 0)] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        for kind in [
            OptimizerKind::Adam { lr: 0.01 },
            OptimizerKind::Sgd {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
        ] {
            let mut p = one_weight(0.4);
            let mut opt = OptimizerState::new(kind, &p);
            for _ in 0..3 {
                opt.step(&mut p, &grad(0.0)).unwrap();
            }
            assert_eq!(p.weights()[0][(0, 0)], 0.4);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one_weight(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::Adam { lr: 0.1 }, &p);
        let bad = GradientEstimate::new(vec![Matrix::zeros(2, 1)]);
        assert!(opt.step(&mut p, &bad).is_err());
    }
}
