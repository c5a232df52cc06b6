//! Dual propagation and its adjoint variant: single-phase contrastive
//! Hebbian learning with dyadic (two-compartment) neurons.
//!
//! * [`linalg`]: dense vectors and matrices, factorizations, power iteration.
//! * [`model`]: layered networks, activations and their potentials.
//! * [`inference`]: coordinate-descent updates and the inference engine.
//! * [`learning`]: gradient estimates, oracles, optimizers, training.
//! * [`analysis`]: alignment metrics and quadratic-model theory checks.
//! * [`harness`]: data, configs and experiment runs.

pub mod analysis;
pub mod harness;
pub mod inference;
pub mod learning;
pub mod linalg;
pub mod model;

pub use inference::{run_inference, DyadicState, InferenceReport, NudgeConfig, Schedule, Scheme};
pub use learning::{GradientEstimate, LossKind};
pub use linalg::{Matrix, Vector};
pub use model::{ActivationKind, BiasMode, LayerSpec, NetworkParams};
