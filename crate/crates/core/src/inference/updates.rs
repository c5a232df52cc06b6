//! Single-layer update rules.

use super::{DyadicState, InferenceError, NudgeConfig, Result};
use crate::learning::LossKind;
use crate::linalg::Vector;
use crate::model::{ActivationKind, NetworkParams};

pub const OUTPUT_SOLVE_TOL: f64 = 1e-10;
pub const OUTPUT_SOLVE_MAX_STEPS: usize = 500;

fn check_hidden_index(k: usize, params: &NetworkParams) -> Result<()> {
    let max = params.depth().saturating_sub(1);
    if k == 0 || k > max {
        return Err(InferenceError::LayerIndex { k, max });
    }
    Ok(())
}

/// Bottom-up drive `a_k = W_{k-1} s̄_{k-1}` from the current state.
pub(crate) fn bottom_up(k: usize, state: &DyadicState, params: &NetworkParams, cfg: &NudgeConfig) -> Vector {
    let alpha_below = if k > 1 { cfg.alpha_at(k - 1) } else { 1.0 };
    params.drive(k - 1, &state.mean(k - 1, alpha_below))
}

/// `(f(a + up·fb), f(a − down·fb))`
#[inline]
pub(crate) fn nudged_pair(act: ActivationKind, a: &[f64], fb: &[f64], up: f64, down: f64) -> (Vector, Vector) {
    let plus = a.iter().zip(fb).map(|(&ai, &fi)| act.apply_scalar(ai + up * fi)).collect();
    let minus = a.iter().zip(fb).map(|(&ai, &fi)| act.apply_scalar(ai - down * fi)).collect();
    (plus, minus)
}

/// Original dual propagation for hidden layer `k`:
/// `s⁺ = f(a_k + α W_kᵀ δ_{k+1})`, `s⁻ = f(a_k − ᾱ W_kᵀ δ_{k+1})`.
pub fn dp_hidden_update(
    k: usize,
    state: &DyadicState,
    params: &NetworkParams,
    cfg: &NudgeConfig,
) -> Result<(Vector, Vector)> {
    check_hidden_index(k, params)?;
    let a = bottom_up(k, state, params, cfg);
    let fb = params.feedback(k, &state.delta(k + 1));
    let alpha = cfg.alpha_at(k);
    Ok(nudged_pair(params.activation(k), &a, &fb, alpha, 1.0 - alpha))
}

/// Adjoint variant for hidden layer `k`:
/// `s⁺ = f(a_k + ᾱ W_kᵀ δ_{k+1})`, `s⁻ = f(a_k − α W_kᵀ δ_{k+1})`.
pub fn dpt_hidden_update(
    k: usize,
    state: &DyadicState,
    params: &NetworkParams,
    cfg: &NudgeConfig,
) -> Result<(Vector, Vector)> {
    check_hidden_index(k, params)?;
    let a = bottom_up(k, state, params, cfg);
    let fb = params.feedback(k, &state.delta(k + 1));
    let alpha = cfg.alpha_at(k);
    Ok(nudged_pair(params.activation(k), &a, &fb, 1.0 - alpha, alpha))
}

/// Output compartments of original dual propagation:
/// `s⁺ = argmin αℓ_β(s) + ½‖s‖² − sᵀa_L`, `s⁻ = argmin −ᾱℓ_β(s) + ½‖s‖² − sᵀa_L`.
///
/// Closed form for least squares; cross-entropy uses a damped gradient
/// iteration to [`OUTPUT_SOLVE_TOL`].
pub fn dp_output_update(a_l: &Vector, y: &Vector, cfg: &NudgeConfig, loss: LossKind) -> Result<(Vector, Vector)> {
    let alpha = cfg.output_alpha();
    let (gp, gm) = (alpha * cfg.beta, (1.0 - alpha) * cfg.beta);
    let curvature = 1.0 - gm * loss.curvature_bound();
    if curvature <= 0.0 {
        return Err(InferenceError::OutputSubproblemNonconvex { curvature });
    }
    match loss {
        LossKind::LeastSquares => {
            let plus = a_l.zip_map(y, |a, t| (a + gp * t) / (1.0 + gp));
            let minus = a_l.zip_map(y, |a, t| (a - gm * t) / (1.0 - gm));
            Ok((plus, minus))
        }
        LossKind::CrossEntropy => {
            // Hessians are I + gp·H and I − gm·H with 0 ⪯ H ⪯ ½I.
            let plus = solve_output(a_l, y, gp, 2.0 / (2.0 + 0.5 * gp), loss)?;
            let minus = solve_output(a_l, y, -gm, 2.0 / (2.0 - 0.5 * gm), loss)?;
            Ok((plus, minus))
        }
    }
}

/// Minimizes `w·ℓ(s) + ½‖s‖² − sᵀa` by gradient steps of size `step`.
fn solve_output(a: &Vector, y: &Vector, w: f64, step: f64, loss: LossKind) -> Result<Vector> {
    let mut s = a.clone();
    if w == 0.0 {
        return Ok(s);
    }
    let mut last = f64::INFINITY;
    for _ in 0..OUTPUT_SOLVE_MAX_STEPS {
        let g = loss.grad(&s, y);
        let grad = s.sub(a).zip_map(&g, |d, gi| d + w * gi);
        let delta = step * grad.norm();
        s.axpy(-step, &grad);
        last = delta;
        // Non-finite drives are left to the caller's divergence check.
        if delta <= OUTPUT_SOLVE_TOL || !delta.is_finite() {
            return Ok(s);
        }
    }
    Err(InferenceError::NoConvergence {
        residual: last,
        steps: OUTPUT_SOLVE_MAX_STEPS,
    })
}

/// Output compartments of the adjoint variant: with `g = β ℓ'(a_L)`,
/// `s⁺ = a_L − ᾱ g`, `s⁻ = a_L + α g`, so `s̄_L = a_L` and `δ_L = −g`.
pub fn dpt_output_update(a_l: &Vector, y: &Vector, cfg: &NudgeConfig, loss: LossKind) -> (Vector, Vector) {
    let alpha = cfg.output_alpha();
    let g = loss.grad(a_l, y).scale(cfg.beta);
    let plus = a_l.zip_map(&g, |a, gi| a - (1.0 - alpha) * gi);
    let minus = a_l.zip_map(&g, |a, gi| a + alpha * gi);
    (plus, minus)
}

/// One damped fixed-point step for the single chain of states that remains
/// when `α ∈ {0, 1}`:
///
/// `s_k ← Π_C((W_{k-1}s_{k-1} + W_kᵀ(s_{k+1} − f_{k+1}(W_k s_k)) + L s_k) / (1 + L))`
///
/// where every `s` is the chain state `s̄` (equal to `s⁺` for α = 1 and
/// `s⁻` for α = 0). Fixed points of this map are stationary points of the
/// per-layer objective; it is a contraction once
/// `L > max(0, ‖W_kᵀW_k‖₂ − 1) / 2`.
pub fn stabilized_update(
    k: usize,
    state: &DyadicState,
    params: &NetworkParams,
    cfg: &NudgeConfig,
    damping: f64,
) -> Result<Vector> {
    check_hidden_index(k, params)?;
    let act = params.activation(k);
    if !act.is_projection() {
        return Err(InferenceError::UnsupportedActivation {
            layer: k,
            activation: act.to_string(),
        });
    }
    if !(damping >= 0.0) {
        return Err(InferenceError::InvalidConfig(format!("damping {damping} must be ≥ 0")));
    }
    let a = bottom_up(k, state, params, cfg);
    let current = state.mean(k, cfg.alpha_at(k));
    let above = state.mean(k + 1, cfg.alpha_at(k + 1));
    Ok(damped_step(params, k, &a, &current, &above, damping))
}

/// The map itself, with the bottom-up drive supplied by the caller.
pub(crate) fn damped_step(
    params: &NetworkParams,
    k: usize,
    a: &[f64],
    current: &Vector,
    above: &Vector,
    damping: f64,
) -> Vector {
    let predicted = params.activation(k + 1).apply(&params.drive(k, current));
    let mismatch = above.sub(&predicted);
    let fb = params.feedback(k, &mismatch);
    let act = params.activation(k);
    let inv = 1.0 / (1.0 + damping);
    a.iter()
        .zip(fb.iter())
        .zip(current.iter())
        .map(|((&ai, &fi), &si)| act.apply_scalar((ai + fi + damping * si) * inv))
        .collect()
}
