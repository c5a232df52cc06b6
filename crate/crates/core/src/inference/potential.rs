use super::{DyadicState, InferenceError, NudgeConfig, Result};
use crate::learning::LossKind;
use crate::linalg::Vector;
use crate::model::NetworkParams;

/// The dual-propagation network potential
///
/// `α ℓ(s_L⁺) + ᾱ ℓ(s_L⁻) + (1/β) Σ_k [E_k(s_k⁺, s̄_{k-1}) − E_k(s_k⁻, s̄_{k-1})]`
///
/// with `E_k(s, t) = G_k(s) − sᵀ W_{k-1} t`. Here `ℓ` is the unweighted loss;
/// multiplying through by β gives the β-weighted objective whose partial
/// minimizers are the output updates.
pub fn dp_potential_value(
    params: &NetworkParams,
    state: &DyadicState,
    y: &Vector,
    cfg: &NudgeConfig,
    loss: LossKind,
) -> Result<f64> {
    let depth = params.depth();
    if state.depth() != depth {
        return Err(InferenceError::InvalidConfig(format!(
            "state has {} layers, network has {depth}",
            state.depth()
        )));
    }
    let energy = |k: usize, s: &[f64], drive: &[f64]| -> Result<f64> {
        let g = params
            .activation(k)
            .potential(s)
            .ok_or(InferenceError::InfeasibleState { layer: k })?;
        Ok(g - s.iter().zip(drive).map(|(a, b)| a * b).sum::<f64>())
    };
    let mut contrast = 0.0;
    for k in 1..=depth {
        let below = if k == 1 {
            state.input().clone()
        } else {
            state.mean(k - 1, cfg.alpha_at(k - 1))
        };
        let drive = params.drive(k - 1, &below);
        contrast += energy(k, state.plus(k), &drive)? - energy(k, state.minus(k), &drive)?;
    }
    let alpha = cfg.output_alpha();
    let fit = alpha * loss.value(state.plus(depth), y) + (1.0 - alpha) * loss.value(state.minus(depth), y);
    Ok(fit + contrast / cfg.beta)
}
