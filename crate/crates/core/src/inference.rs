//! Dyadic-state inference.
//!
//! Every neuron carries two compartments `s⁺` and `s⁻`. The weighted mean
//! `s̄ = α s⁺ + (1 − α) s⁻` is sent to the next layer, the difference
//! `δ = s⁺ − s⁻` is sent to the previous one. Three update rules are
//! provided:
//!
//! * [`Scheme::Dp`]: original dual propagation,
//!   `s⁺ = f(a + α Wᵀδ)`, `s⁻ = f(a − ᾱ Wᵀδ)`;
//! * [`Scheme::Dpt`]: the adjoint variant with `α` and `ᾱ` exchanged in the
//!   feedback terms, which stays stable for asymmetric nudging;
//! * [`Scheme::DpStabilized`]: original dual propagation, but for
//!   `α ∈ {0, 1}` the hidden layers are solved with damped (majorize-minimize)
//!   fixed-point steps on the remaining single chain of states.

mod engine;
mod potential;
mod updates;

pub use engine::{run_inference, InferenceEngine};
pub use potential::dp_potential_value;
pub use updates::{
    dp_hidden_update, dp_output_update, dpt_hidden_update, dpt_output_update, stabilized_update,
    OUTPUT_SOLVE_MAX_STEPS, OUTPUT_SOLVE_TOL,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::LossKind;
use crate::linalg::{LinalgError, Vector};
use crate::model::{ModelError, NetworkParams};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid nudging configuration: {0}")]
    InvalidConfig(String),
    #[error("layer index {k} outside 1..={max}")]
    LayerIndex { k: usize, max: usize },
    #[error("output subproblem is not convex (curvature {curvature:.3e} ≤ 0)")]
    OutputSubproblemNonconvex { curvature: f64 },
    #[error("output subproblem solve did not converge (step {residual:.3e} after {steps} steps)")]
    NoConvergence { residual: f64, steps: usize },
    #[error("stabilized updates need a projection-type activation, layer {layer} has {activation}")]
    UnsupportedActivation { layer: usize, activation: String },
    #[error("output layer must be linear (softmax belongs to the loss), found {0}")]
    UnsupportedOutputActivation(String),
    #[error("state of layer {layer} is infeasible for its potential")]
    InfeasibleState { layer: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Dp,
    Dpt,
    DpStabilized,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Dp => "dp",
            Scheme::Dpt => "dpt",
            Scheme::DpStabilized => "dp-stabilized",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dp" => Ok(Scheme::Dp),
            "dpt" | "dp-t" | "adjoint" => Ok(Scheme::Dpt),
            "dp-stabilized" | "stabilized" => Ok(Scheme::DpStabilized),
            _ => Err(format!("unknown scheme `{s}` (expected dp, dpt or dp-stabilized)")),
        }
    }
}

/// Order in which layers are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Schedule {
    /// One input→output pass, the output update, one output→input pass.
    SingleSweep,
    /// `n` sweeps as above.
    RepeatedSweeps(usize),
    /// `n` input→output passes; errors travel one layer down per pass.
    ForwardPasses(usize),
}

impl Schedule {
    pub fn passes(self) -> usize {
        match self {
            Schedule::SingleSweep => 1,
            Schedule::RepeatedSweeps(n) | Schedule::ForwardPasses(n) => n,
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::SingleSweep => f.write_str("sweep"),
            Schedule::RepeatedSweeps(n) => write!(f, "sweeps:{n}"),
            Schedule::ForwardPasses(n) => write!(f, "forward:{n}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let count = |t: &str| {
            t.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| format!("bad pass count in schedule `{s}`"))
        };
        if s == "sweep" {
            Ok(Schedule::SingleSweep)
        } else if let Some(n) = s.strip_prefix("sweeps:") {
            Ok(Schedule::RepeatedSweeps(count(n)?))
        } else if let Some(n) = s.strip_prefix("forward:") {
            Ok(Schedule::ForwardPasses(count(n)?))
        } else {
            Err(format!("unknown schedule `{s}` (expected sweep, sweeps:N or forward:N)"))
        }
    }
}

impl TryFrom<String> for Schedule {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Schedule> for String {
    fn from(s: Schedule) -> String {
        s.to_string()
    }
}

/// Source of the damping constant `L` of the stabilized updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Damping {
    /// `L_k` = power-iteration estimate of `‖W_kᵀW_k‖₂` with this many steps.
    AutoPowerIter { steps: usize },
    Explicit(f64),
}

impl Default for Damping {
    fn default() -> Self {
        Damping::AutoPowerIter { steps: 5 }
    }
}

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

/// The knobs of dyadic inference.
#[derive(Debug, Clone, PartialEq)]
pub struct NudgeConfig {
    /// One global α, or one α per layer `1 … L`.
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub scheme: Scheme,
    pub schedule: Schedule,
    pub damping: Damping,
    pub divergence_threshold: f64,
}

impl NudgeConfig {
    pub fn new(scheme: Scheme, alpha: f64, beta: f64) -> Self {
        NudgeConfig {
            alpha: vec![alpha],
            beta,
            scheme,
            schedule: Schedule::SingleSweep,
            damping: Damping::default(),
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_damping(mut self, damping: Damping) -> Self {
        self.damping = damping;
        self
    }

    pub fn with_layer_alphas(mut self, alphas: Vec<f64>) -> Self {
        self.alpha = alphas;
        self
    }

    /// α of layer `k` (`1 ≤ k ≤ L`); the input layer counts as fully
    /// "plus" since it has a single state anyway.
    pub fn alpha_at(&self, k: usize) -> f64 {
        if self.alpha.len() == 1 {
            self.alpha[0]
        } else {
            self.alpha[k - 1]
        }
    }

    /// α of the output layer.
    pub fn output_alpha(&self) -> f64 {
        *self.alpha.last().expect("alpha is non-empty")
    }

    /// Global α for the stabilized scheme.
    fn global_alpha(&self) -> Option<f64> {
        let a = self.alpha[0];
        self.alpha.iter().all(|&x| x == a).then_some(a)
    }

    /// `Some(α)` when the stabilized single-chain mode applies.
    pub(crate) fn chain_alpha(&self) -> Option<f64> {
        if self.scheme != Scheme::DpStabilized {
            return None;
        }
        self.global_alpha().filter(|&a| a == 0.0 || a == 1.0)
    }

    pub fn validate(&self, depth: usize, loss: LossKind) -> Result<()> {
        let bad = |m: String| Err(InferenceError::InvalidConfig(m));
        if self.alpha.is_empty() || (self.alpha.len() != 1 && self.alpha.len() != depth) {
            return bad(format!("need 1 or {depth} alpha values, got {}", self.alpha.len()));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("alpha {a} outside [0, 1]"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.schedule.passes() == 0 {
            return bad("schedule needs at least one pass".into());
        }
        match self.damping {
            Damping::AutoPowerIter { steps } if steps == 0 => return bad("power iteration needs ≥ 1 step".into()),
            Damping::Explicit(l) if !(l >= 0.0 && l.is_finite()) => return bad(format!("damping {l} must be ≥ 0")),
            _ => {}
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence threshold must be positive".into());
        }
        if self.scheme == Scheme::DpStabilized && self.global_alpha().is_none() {
            return bad("the stabilized scheme takes a single global alpha".into());
        }
        if self.scheme != Scheme::Dpt {
            // Curvature of argmin −ᾱβℓ(s) + ½‖s‖² − sᵀa.
            let curvature = 1.0 - (1.0 - self.alpha_at(depth)) * self.beta * loss.curvature_bound();
            if curvature <= 0.0 {
                return Err(InferenceError::OutputSubproblemNonconvex { curvature });
            }
        }
        Ok(())
    }
}

/// Paired states `(s⁺, s⁻)` for layers `1 … L`, plus the clamped input.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicState {
    input: Vector,
    plus: Vec<Vector>,
    minus: Vec<Vector>,
}

impl DyadicState {
    /// Both compartments equal to the given per-layer states (δ = 0).
    pub fn from_states(input: Vector, states: Vec<Vector>) -> Self {
        DyadicState {
            input,
            plus: states.clone(),
            minus: states,
        }
    }

    pub fn from_parts(input: Vector, plus: Vec<Vector>, minus: Vec<Vector>) -> Self {
        assert_eq!(plus.len(), minus.len());
        DyadicState { input, plus, minus }
    }

    /// The free (β → 0) state: forward pass in both compartments.
    pub fn from_forward(params: &NetworkParams, x: &Vector) -> Result<Self> {
        let states = params.forward(x)?;
        Ok(Self::from_states(x.clone(), states))
    }

    pub fn depth(&self) -> usize {
        self.plus.len()
    }

    pub fn input(&self) -> &Vector {
        &self.input
    }

    pub fn plus(&self, k: usize) -> &Vector {
        &self.plus[k - 1]
    }

    pub fn minus(&self, k: usize) -> &Vector {
        &self.minus[k - 1]
    }

    pub fn set(&mut self, k: usize, plus: Vector, minus: Vector) {
        self.plus[k - 1] = plus;
        self.minus[k - 1] = minus;
    }

    /// `s̄_k = α s_k⁺ + (1 − α) s_k⁻`; layer 0 is the input.
    pub fn mean(&self, k: usize, alpha: f64) -> Vector {
        if k == 0 {
            return self.input.clone();
        }
        Vector::lincomb(alpha, &self.plus[k - 1], 1.0 - alpha, &self.minus[k - 1])
    }

    /// `δ_k = s_k⁺ − s_k⁻`.
    pub fn delta(&self, k: usize) -> Vector {
        self.plus[k - 1].sub(&self.minus[k - 1])
    }

    pub fn is_finite(&self) -> bool {
        self.plus.iter().chain(&self.minus).all(Vector::is_finite)
    }

    /// Largest compartment norm over all layers.
    pub fn max_norm(&self) -> f64 {
        self.plus.iter().chain(&self.minus).map(Vector::norm).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub state: DyadicState,
    /// Passes (sweeps or forward passes) actually performed.
    pub iterations: usize,
    /// Largest per-layer update norm during the last pass.
    pub residual: f64,
    pub diverged: bool,
}
