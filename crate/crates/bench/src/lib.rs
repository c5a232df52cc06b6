//! Benchmark fixtures.

use dualprop::model::{init_weights, mlp_specs};
use dualprop::{ActivationKind, NetworkParams, Vector};

/// ReLU MLP with deterministic weights.
pub fn mlp(widths: &[usize], seed: u64) -> NetworkParams {
    init_weights(&mlp_specs(widths, ActivationKind::Relu).expect("valid widths"), seed).expect("valid specs")
}

/// An input in `[0, 1)` and a one-hot target for `params`.
pub fn sample(params: &NetworkParams, seed: u64) -> (Vector, Vector) {
    let n = params.input_dim();
    let x: Vector = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0).collect();
    let y = Vector::basis(params.output_dim(), (seed as usize) % params.output_dim());
    (x, y)
}
