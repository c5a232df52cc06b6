use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

/// Target losses on the output layer. Values and gradients here are the
/// *unweighted* losses; the nudging strength β multiplies them wherever the
/// β-weighted loss is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `½‖s − y‖²`
    LeastSquares,
    /// `CE(softmax(s), y)` on logits `s`; softmax is part of the loss, never a
    /// layer activation.
    CrossEntropy,
}

impl LossKind {
    pub fn value(self, s: &[f64], y: &[f64]) -> f64 {
        match self {
            LossKind::LeastSquares => 0.5 * s.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            LossKind::CrossEntropy => {
                let lse = log_sum_exp(s);
                s.iter().zip(y).map(|(&si, &yi)| yi * (lse - si)).sum()
            }
        }
    }

    pub fn grad(self, s: &[f64], y: &[f64]) -> Vector {
        match self {
            LossKind::LeastSquares => s.iter().zip(y).map(|(a, b)| a - b).collect(),
            LossKind::CrossEntropy => {
                let p = softmax(s);
                p.zip_map(&Vector::from(y.to_vec()), |pi, yi| pi - yi)
            }
        }
    }

    /// Upper bound on the largest Hessian eigenvalue of the unweighted loss.
    pub fn curvature_bound(self) -> f64 {
        match self {
            LossKind::LeastSquares => 1.0,
            // diag(p) − ppᵀ has spectral norm at most ½.
            LossKind::CrossEntropy => 0.5,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::LeastSquares => "ls",
            LossKind::CrossEntropy => "ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ls" | "least-squares" | "mse" => Ok(LossKind::LeastSquares),
            "ce" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            _ => Err(format!("unknown loss `{s}` (expected ls or ce)")),
        }
    }
}

pub fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + s.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(s: &[f64]) -> Vector {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// One-hot encoding of a class label.
pub fn one_hot(label: usize, classes: usize) -> Vector {
    Vector::basis(classes, label)
}
