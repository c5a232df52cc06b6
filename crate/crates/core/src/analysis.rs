//! Executable checks of the theory: gradient alignment, Lipschitz
//! estimates, quadratic relaxation objectives, trilevel closed forms and the
//! Bregman gap of the adjoint Lagrangian.

mod relaxation;
mod trilevel;

pub use relaxation::{
    arovr_objective, arovr_states, check_prop1, check_prop2, lemma_chain, sprovr_objective, sprovr_states,
    AlphaOrdering, Prop2Pair, PropositionReport, PropositionSample, QuadraticRelaxationInstance, PROP_TOL,
};
pub use trilevel::{
    arovr_delta_closed_form, sprovr_delta_closed_form, trilevel_fixed_point_check, FixedPointReport, Relaxation,
    TrilevelInstance,
};

use thiserror::Error;

use crate::learning::GradientEstimate;
use crate::linalg::{spectral_norm, LinalgError, Matrix, Vector};
use crate::model::{ActivationKind, NetworkParams};

/// Curvature margin below which a quadratic subproblem counts as indefinite.
pub const CURVATURE_MARGIN: f64 = 1e-10;

const LIPSCHITZ_ITERS: usize = 100;
const LIPSCHITZ_SEED: u64 = 0x11b5;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("gradients have {left} and {right} layers")]
    LayerCount { left: usize, right: usize },
    #[error("layer {layer}: shapes {left:?} and {right:?} differ")]
    ShapeMismatch {
        layer: usize,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{which} subproblem is not strictly convex (min eigenvalue {min_eig:.3e})")]
    IndefiniteSubproblem { which: &'static str, min_eig: f64 },
    #[error("{0} system is singular")]
    SingularSystem(&'static str),
    #[error("state is outside the domain of the potential")]
    Infeasible,
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn check_pair(a: &GradientEstimate, b: &GradientEstimate) -> Result<()> {
    if a.len() != b.len() {
        return Err(AnalysisError::LayerCount {
            left: a.len(),
            right: b.len(),
        });
    }
    for (k, (x, y)) in a.layers().iter().zip(b.layers()).enumerate() {
        if x.shape() != y.shape() {
            return Err(AnalysisError::ShapeMismatch {
                layer: k,
                left: x.shape(),
                right: y.shape(),
            });
        }
    }
    Ok(())
}

/// Per-layer angle in degrees between two gradients, treating each layer as
/// one flat vector. Layers where either side is zero have no angle.
pub fn grad_angle(a: &GradientEstimate, b: &GradientEstimate) -> Result<Vec<Option<f64>>> {
    check_pair(a, b)?;
    Ok(a.layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| {
            let (nx, ny) = (x.frobenius_norm(), y.frobenius_norm());
            if nx == 0.0 || ny == 0.0 {
                return None;
            }
            let dot: f64 = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).sum();
            Some((dot / (nx * ny)).clamp(-1.0, 1.0).acos().to_degrees())
        })
        .collect())
}

/// Per-layer cosine similarity; `None` for zero layers.
pub fn grad_cosine(a: &GradientEstimate, b: &GradientEstimate) -> Result<Vec<Option<f64>>> {
    Ok(grad_angle(a, b)?.into_iter().map(|d| d.map(|d| d.to_radians().cos())).collect())
}

/// Per-layer Frobenius norm of `a − b`.
pub fn grad_l2_diff(a: &GradientEstimate, b: &GradientEstimate) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    Ok(a.layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Spectral norm of `W_{L-1} ⋯ W_0` (bias columns excluded), by 100 power
/// iterations. An upper bound on the network's Lipschitz constant for
/// 1-Lipschitz activations.
pub fn lipschitz_estimate(params: &NetworkParams) -> f64 {
    let parts = params.linear_parts();
    let mut product = parts.last().expect("network has layers").clone();
    for w in parts.iter().rev().skip(1) {
        product = product.matmul(w).expect("weights form a chain");
    }
    spectral_norm(&product, LIPSCHITZ_ITERS, LIPSCHITZ_SEED).expect("product is non-empty")
}

/// `D_G(a‖b) = G(a) − G(b) − (a − b)ᵀ∇G(b)`.
pub fn bregman_divergence(kind: ActivationKind, a: &Vector, b: &Vector) -> Result<f64> {
    let ga = kind.potential(a).ok_or(AnalysisError::Infeasible)?;
    let gb = kind.potential(b).ok_or(AnalysisError::Infeasible)?;
    let grad = kind.potential_grad(b);
    let lin: f64 = a.iter().zip(b.iter()).zip(grad.iter()).map(|((x, y), g)| (x - y) * g).sum();
    Ok(ga - gb - lin)
}

/// `D_G(s⁺‖s̄) − D_G(s⁻‖s̄)` with `s̄ = α s⁺ + (1 − α) s⁻`.
///
/// For quadratic `G` this is `½(1 − 2α)‖s⁺ − s⁻‖²`: zero only at α = ½.
pub fn bregman_gap(kind: ActivationKind, plus: &Vector, minus: &Vector, alpha: f64) -> Result<f64> {
    if plus.dim() != minus.dim() {
        return Err(LinalgError::DimensionMismatch {
            op: "bregman gap",
            expected: plus.dim(),
            got: minus.dim(),
        }
        .into());
    }
    let mean = Vector::lincomb(alpha, plus, 1.0 - alpha, minus);
    Ok(bregman_divergence(kind, plus, &mean)? - bregman_divergence(kind, minus, &mean)?)
}

/// `½ sᵀHs + bᵀs + c`.
pub(crate) fn quadratic(h: &Matrix, b: &Vector, c: f64, s: &Vector) -> f64 {
    0.5 * s.dot(&h.matvec_unchecked(s)) + b.dot(s) + c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(rows: &[Vec<f64>]) -> GradientEstimate {
        GradientEstimate::new(vec![Matrix::from_rows(rows)])
    }

    #[test]
    fn angle_examples() {
        let g = est(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        let neg = est(&[vec![-1.0, -2.0], vec![3.0, -0.5]]);
        assert!(grad_angle(&g, &g).unwrap()[0].unwrap().abs() < 1e-6);
        assert!((grad_angle(&g, &neg).unwrap()[0].unwrap() - 180.0).abs() < 1e-6);
        let a = est(&[vec![1.0, 0.0]]);
        let b = est(&[vec![0.0, 1.0]]);
        assert!((grad_angle(&a, &b).unwrap()[0].unwrap() - 90.0).abs() < 1e-12);
        let zero = est(&[vec![0.0, 0.0]]);
        assert_eq!(grad_angle(&a, &zero).unwrap(), vec![None]);
        assert!(grad_angle(&a, &g).is_err());
    }

    #[test]
    fn l2_diff_examples() {
        let g = est(&[vec![3.0, 4.0]]);
        let zero = est(&[vec![0.0, 0.0]]);
        assert_eq!(grad_l2_diff(&g, &g).unwrap(), vec![0.0]);
        assert_eq!(grad_l2_diff(&g, &zero).unwrap(), vec![5.0]);
    }

    #[test]
    fn lipschitz_of_scaled_identities() {
        use crate::model::{BiasMode, LayerSpec};
        let make = |a: f64, b: f64| {
            NetworkParams::new(
                vec![
                    LayerSpec::new(3, 3, ActivationKind::Relu),
                    LayerSpec::new(3, 3, ActivationKind::Identity),
                ],
                vec![Matrix::identity(3).scale(a), Matrix::identity(3).scale(b)],
                BiasMode::Off,
            )
            .unwrap()
        };
        assert!((lipschitz_estimate(&make(1.0, 1.0)) - 1.0).abs() < 1e-12);
        assert!((lipschitz_estimate(&make(3.0, 2.0)) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bregman_examples() {
        let q = ActivationKind::Identity;
        let p = Vector::from(vec![1.0]);
        let m = Vector::from(vec![3.0]);
        assert_eq!(bregman_gap(q, &p, &m, 0.5).unwrap(), 0.0);
        assert_eq!(bregman_gap(q, &p, &m, 1.0).unwrap(), -2.0);
        assert_eq!(bregman_gap(q, &p, &p, 0.3).unwrap(), 0.0);
        assert!(bregman_gap(ActivationKind::Relu, &Vector::from(vec![-1.0]), &m, 0.5).is_err());
    }

    #[test]
    fn leaky_bregman_is_nonnegative_divergence() {
        let k = ActivationKind::LeakyRelu(0.1);
        let a = Vector::from(vec![-1.0, 2.0]);
        let b = Vector::from(vec![0.5, -0.2]);
        assert!(bregman_divergence(k, &a, &b).unwrap() > 0.0);
        assert_eq!(bregman_divergence(k, &a, &a).unwrap(), 0.0);
    }
}
