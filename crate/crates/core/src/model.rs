//! Network architecture, activation functions and their convex potentials,
//! weight initialization and the plain forward pass.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, Vector};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("network needs at least one layer")]
    NoLayers,
    #[error("layer {layer}: dimensions must be positive (in {in_dim}, out {out_dim})")]
    ZeroWidth { layer: usize, in_dim: usize, out_dim: usize },
    #[error("layer {layer} expects input width {expected}, previous layer produces {got}")]
    BrokenChain { layer: usize, expected: usize, got: usize },
    #[error("weight {index} has shape {got:?}, expected {expected:?}")]
    WeightShape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
    #[error("invalid architecture `{0}`")]
    BadArchitecture(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Element-wise activation functions.
///
/// Identity, ReLU and hard-sigmoid are projections `Π_C` onto a convex set
/// `C` (all of ℝ, the non-negative orthant, the unit box) and come from the
/// potential `G(s) = ½‖s‖² + ι_C(s)`. Leaky ReLU is invertible instead; its
/// potential is the piecewise quadratic with `∇G = f⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ActivationKind {
    Identity,
    Relu,
    /// Slope for negative inputs, in `(0, 1]`.
    LeakyRelu(f64),
    HardSigmoid,
}

impl ActivationKind {
    #[inline]
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            ActivationKind::HardSigmoid => x.clamp(0.0, 1.0),
        }
    }

    pub fn apply(self, x: &[f64]) -> Vector {
        x.iter().map(|&v| self.apply_scalar(v)).collect()
    }

    /// Sub-derivative used by back-propagation. Kinks take the value of the
    /// flat side, so ReLU'(0) = 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            ActivationKind::HardSigmoid => {
                if x > 0.0 && x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// True for the `½‖s‖² + ι_C` family, where `f = Π_C`.
    pub fn is_projection(self) -> bool {
        !matches!(self, ActivationKind::LeakyRelu(_))
    }

    /// Projection onto the feasible set, `None` for kinds outside the
    /// quadratic-plus-indicator family.
    pub fn project(self, x: &[f64]) -> Option<Vector> {
        self.is_projection().then(|| self.apply(x))
    }

    pub fn is_feasible_scalar(self, s: f64) -> bool {
        match self {
            ActivationKind::Identity | ActivationKind::LeakyRelu(_) => s.is_finite(),
            ActivationKind::Relu => s >= 0.0,
            ActivationKind::HardSigmoid => (0.0..=1.0).contains(&s),
        }
    }

    pub fn is_feasible(self, s: &[f64]) -> bool {
        s.iter().all(|&v| self.is_feasible_scalar(v))
    }

    /// `G(s)`, or `None` when `s` lies outside the domain (indicator = ∞).
    pub fn potential(self, s: &[f64]) -> Option<f64> {
        if !self.is_feasible(s) {
            return None;
        }
        Some(match self {
            ActivationKind::LeakyRelu(a) => s
                .iter()
                .map(|&v| if v >= 0.0 { 0.5 * v * v } else { 0.5 * v * v / a })
                .sum(),
            _ => 0.5 * s.iter().map(|v| v * v).sum::<f64>(),
        })
    }

    /// `∇G(s)` on the domain. For the projection family this is the
    /// gradient of the smooth part, i.e. `s` itself.
    pub fn potential_grad(self, s: &[f64]) -> Vector {
        match self {
            ActivationKind::LeakyRelu(a) => s.iter().map(|&v| if v >= 0.0 { v } else { v / a }).collect(),
            _ => Vector::from(s.to_vec()),
        }
    }

    fn tag(self) -> String {
        match self {
            ActivationKind::Identity => "identity".into(),
            ActivationKind::Relu => "relu".into(),
            ActivationKind::LeakyRelu(a) => format!("leaky-relu:{a}"),
            ActivationKind::HardSigmoid => "hard-sigmoid".into(),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for ActivationKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::UnknownActivation(s.to_string());
        match s {
            "identity" | "linear" => Ok(ActivationKind::Identity),
            "relu" => Ok(ActivationKind::Relu),
            "hard-sigmoid" | "hardsigmoid" => Ok(ActivationKind::HardSigmoid),
            "leaky-relu" => Ok(ActivationKind::LeakyRelu(0.01)),
            _ => {
                let slope = s.strip_prefix("leaky-relu:").ok_or_else(bad)?;
                let a: f64 = slope.parse().map_err(|_| bad())?;
                if !(a > 0.0 && a <= 1.0) {
                    return Err(bad());
                }
                Ok(ActivationKind::LeakyRelu(a))
            }
        }
    }
}

impl TryFrom<String> for ActivationKind {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, ModelError> {
        s.parse()
    }
}

impl From<ActivationKind> for String {
    fn from(a: ActivationKind) -> String {
        a.tag()
    }
}

/// Element-wise `f(x)`.
pub fn activation_apply(kind: ActivationKind, x: &Vector) -> Vector {
    kind.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationKind,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: ActivationKind) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Builds layer specs from widths such as `[784, 512, 512, 10]`: hidden
/// layers get `hidden`, the output layer is linear.
pub fn mlp_specs(widths: &[usize], hidden: ActivationKind) -> Result<Vec<LayerSpec>, ModelError> {
    if widths.len() < 2 {
        return Err(ModelError::NoLayers);
    }
    let n = widths.len() - 1;
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let act = if k + 1 == n { ActivationKind::Identity } else { hidden };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect();
    validate_specs(&specs)?;
    Ok(specs)
}

/// Parses `"784-512-512-10"`.
pub fn parse_widths(arch: &str) -> Result<Vec<usize>, ModelError> {
    arch.split('-')
        .map(|t| t.trim().parse::<usize>().map_err(|_| ModelError::BadArchitecture(arch.to_string())))
        .collect()
}

/// Whether each layer input carries an extra constant-1 feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    #[default]
    Off,
    Augmented,
}

impl BiasMode {
    fn extra(self) -> usize {
        match self {
            BiasMode::Off => 0,
            BiasMode::Augmented => 1,
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(), ModelError> {
    if specs.is_empty() {
        return Err(ModelError::NoLayers);
    }
    for (k, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(ModelError::ZeroWidth {
                layer: k + 1,
                in_dim: s.in_dim,
                out_dim: s.out_dim,
            });
        }
        if k > 0 && specs[k - 1].out_dim != s.in_dim {
            return Err(ModelError::BrokenChain {
                layer: k + 1,
                expected: s.in_dim,
                got: specs[k - 1].out_dim,
            });
        }
    }
    Ok(())
}

/// Architecture plus weights `W_0 … W_{L-1}`; `weights[k]` maps layer `k`
/// (layer 0 is the input) to layer `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<LayerSpec>,
    weights: Vec<Matrix>,
    bias: BiasMode,
}

impl NetworkParams {
    pub fn new(layers: Vec<LayerSpec>, weights: Vec<Matrix>, bias: BiasMode) -> Result<Self, ModelError> {
        validate_specs(&layers)?;
        if weights.len() != layers.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                layers.len()
            )));
        }
        for (k, (w, s)) in weights.iter().zip(&layers).enumerate() {
            let expected = (s.out_dim, s.in_dim + bias.extra());
            if w.shape() != expected {
                return Err(ModelError::WeightShape {
                    index: k,
                    expected,
                    got: w.shape(),
                });
            }
        }
        Ok(NetworkParams { layers, weights, bias })
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn bias_mode(&self) -> BiasMode {
        self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Width of layer `k`, `0 ≤ k ≤ L`.
    pub fn width(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim()
        } else {
            self.layers[k - 1].out_dim
        }
    }

    /// Activation of layer `k`, `1 ≤ k ≤ L`.
    pub fn activation(&self, k: usize) -> ActivationKind {
        self.layers[k - 1].activation
    }

    /// Weight matrices without the bias column, as used for Lipschitz
    /// estimates.
    pub fn linear_parts(&self) -> Vec<Matrix> {
        match self.bias {
            BiasMode::Off => self.weights.clone(),
            BiasMode::Augmented => self
                .weights
                .iter()
                .map(|w| Matrix::from_fn(w.rows(), w.cols() - 1, |i, j| w[(i, j)]))
                .collect(),
        }
    }

    /// `W_k s` (with the constant feature appended in augmented mode).
    pub fn drive(&self, k: usize, s: &[f64]) -> Vector {
        let w = &self.weights[k];
        match self.bias {
            BiasMode::Off => w.matvec_unchecked(s),
            BiasMode::Augmented => {
                let n = s.len();
                (0..w.rows())
                    .map(|i| {
                        let row = w.row(i);
                        crate::linalg::dot(&row[..n], s) + row[n]
                    })
                    .collect()
            }
        }
    }

    /// `W_kᵀ d` restricted to the state coordinates of layer `k`.
    pub fn feedback(&self, k: usize, d: &[f64]) -> Vector {
        let full = self.weights[k].matvec_t_unchecked(d);
        match self.bias {
            BiasMode::Off => full,
            BiasMode::Augmented => full.truncated(self.width(k)),
        }
    }

    /// The vector a weight gradient is taken against: `s` itself, or `[s; 1]`.
    pub fn layer_input(&self, s: &Vector) -> Vector {
        match self.bias {
            BiasMode::Off => s.clone(),
            BiasMode::Augmented => s.augmented(),
        }
    }

    /// Pre-activations and states of the plain forward pass.
    pub fn forward_with_preactivations(&self, x: &[f64]) -> Result<(Vec<Vector>, Vec<Vector>), ModelError> {
        if x.len() != self.input_dim() {
            return Err(LinalgError::DimensionMismatch {
                op: "forward",
                expected: self.input_dim(),
                got: x.len(),
            }
            .into());
        }
        let mut pre = Vec::with_capacity(self.depth());
        let mut states: Vec<Vector> = Vec::with_capacity(self.depth());
        for k in 0..self.depth() {
            let input: &[f64] = if k == 0 { x } else { &states[k - 1] };
            let a = self.drive(k, input);
            states.push(self.layers[k].activation.apply(&a));
            pre.push(a);
        }
        Ok((pre, states))
    }

    /// States `s_1 … s_L` of the plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vector>, ModelError> {
        Ok(self.forward_with_preactivations(x)?.1)
    }

    /// Network output `s_L`.
    pub fn predict(&self, x: &[f64]) -> Result<Vector, ModelError> {
        let mut s = self.forward(x)?;
        Ok(s.pop().expect("at least one layer"))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
    }
}

/// `s_k = f_k(W_{k-1} s_{k-1})` for `k = 1 … L`.
pub fn forward(params: &NetworkParams, x: &Vector) -> Result<Vec<Vector>, ModelError> {
    params.forward(x)
}

/// Glorot-uniform weights without bias.
pub fn init_weights(specs: &[LayerSpec], seed: u64) -> Result<NetworkParams, ModelError> {
    init_weights_with_bias(specs, BiasMode::Off, seed)
}

/// Entries uniform in `±√(6 / (fan_in + fan_out))`; bias columns start at
/// zero. Deterministic in `seed`.
pub fn init_weights_with_bias(specs: &[LayerSpec], bias: BiasMode, seed: u64) -> Result<NetworkParams, ModelError> {
    validate_specs(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = specs
        .iter()
        .map(|s| {
            let bound = glorot_bound(s.in_dim, s.out_dim);
            let cols = s.in_dim + bias.extra();
            Matrix::from_fn(s.out_dim, cols, |_, j| {
                if j < s.in_dim {
                    rng.random_range(-bound..=bound)
                } else {
                    0.0
                }
            })
        })
        .collect();
    NetworkParams::new(specs.to_vec(), weights, bias)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
