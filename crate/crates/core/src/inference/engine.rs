use super::updates::{damped_step, dp_output_update, dpt_output_update, nudged_pair};
use super::{Damping, DyadicState, InferenceError, InferenceReport, NudgeConfig, Result, Scheme, Schedule};
use crate::learning::LossKind;
use crate::linalg::{spectral_norm, LinalgError, Vector};
use crate::model::{ActivationKind, NetworkParams};

const DAMPING_SEED: u64 = 0x5eed;

/// Dyadic inference for one network and one configuration.
///
/// Construction validates the configuration and, for the stabilized
/// scheme, computes the per-layer damping constants once, so the same
/// engine can be reused for every sample of a batch.
#[derive(Debug)]
pub struct InferenceEngine<'a> {
    params: &'a NetworkParams,
    cfg: &'a NudgeConfig,
    loss: LossKind,
    /// `L_k` for hidden layers `k = 1 … L−1` (index `k − 1`); empty unless
    /// running the single-chain stabilized mode.
    damping: Vec<f64>,
    chain: Option<f64>,
}

impl<'a> InferenceEngine<'a> {
    pub fn new(params: &'a NetworkParams, cfg: &'a NudgeConfig, loss: LossKind) -> Result<Self> {
        let depth = params.depth();
        cfg.validate(depth, loss)?;
        let out = params.activation(depth);
        if out != ActivationKind::Identity {
            return Err(InferenceError::UnsupportedOutputActivation(out.to_string()));
        }
        let chain = cfg.chain_alpha();
        let mut damping = Vec::new();
        if chain.is_some() {
            for k in 1..depth {
                let act = params.activation(k);
                if !act.is_projection() {
                    return Err(InferenceError::UnsupportedActivation {
                        layer: k,
                        activation: act.to_string(),
                    });
                }
                let l = match cfg.damping {
                    Damping::Explicit(l) => l,
                    Damping::AutoPowerIter { steps } => {
                        let w = &params.linear_parts()[k];
                        let s = spectral_norm(w, steps, DAMPING_SEED + k as u64)?;
                        s * s
                    }
                };
                damping.push(l);
            }
        }
        Ok(InferenceEngine {
            params,
            cfg,
            loss,
            damping,
            chain,
        })
    }

    /// Damping constants of the stabilized hidden layers.
    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    pub fn params(&self) -> &NetworkParams {
        self.params
    }

    pub fn config(&self) -> &NudgeConfig {
        self.cfg
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// Runs the configured schedule from the free state of `x`.
    pub fn run(&self, x: &Vector, y: &Vector) -> Result<InferenceReport> {
        let state = DyadicState::from_forward(self.params, x)?;
        self.run_from(state, y)
    }

    /// Runs the configured schedule from an arbitrary starting state.
    pub fn run_from(&self, mut state: DyadicState, y: &Vector) -> Result<InferenceReport> {
        let p = self.params;
        let depth = p.depth();
        if y.dim() != p.output_dim() {
            return Err(LinalgError::DimensionMismatch {
                op: "inference target",
                expected: p.output_dim(),
                got: y.dim(),
            }
            .into());
        }
        if state.input().dim() != p.input_dim() || state.depth() != depth {
            return Err(LinalgError::DimensionMismatch {
                op: "inference state",
                expected: p.input_dim(),
                got: state.input().dim(),
            }
            .into());
        }
        let a1 = p.drive(0, state.input());
        let mut iterations = 0;
        let mut residual = 0.0;
        let mut diverged = false;
        for _ in 0..self.cfg.schedule.passes() {
            residual = 0.0f64;
            match self.cfg.schedule {
                Schedule::SingleSweep | Schedule::RepeatedSweeps(_) => {
                    for k in 1..depth {
                        residual = residual.max(self.hidden_step(k, &mut state, &a1));
                    }
                    residual = residual.max(self.output_step(&mut state, y, &a1)?);
                    for k in (1..depth).rev() {
                        residual = residual.max(self.hidden_step(k, &mut state, &a1));
                    }
                }
                Schedule::ForwardPasses(_) => {
                    for k in 1..depth {
                        residual = residual.max(self.hidden_step(k, &mut state, &a1));
                    }
                    residual = residual.max(self.output_step(&mut state, y, &a1)?);
                }
            }
            iterations += 1;
            let limit = self.cfg.divergence_threshold;
            if !residual.is_finite() || residual > limit || !state.is_finite() || state.max_norm() > limit {
                diverged = true;
                break;
            }
        }
        if let (Some(alpha), false) = (self.chain, diverged) {
            self.refresh_free(&mut state, alpha, &a1);
        }
        Ok(InferenceReport {
            state,
            iterations,
            residual,
            diverged,
        })
    }

    fn drive_into(&self, k: usize, state: &DyadicState, a1: &Vector) -> Vector {
        if k == 1 {
            a1.clone()
        } else {
            let alpha = self.cfg.alpha_at(k - 1);
            if alpha == 1.0 {
                self.params.drive(k - 1, state.plus(k - 1))
            } else if alpha == 0.0 {
                self.params.drive(k - 1, state.minus(k - 1))
            } else {
                self.params.drive(k - 1, &state.mean(k - 1, alpha))
            }
        }
    }

    /// Updates hidden layer `k` in place and returns the update norm.
    fn hidden_step(&self, k: usize, state: &mut DyadicState, a1: &Vector) -> f64 {
        let a = self.drive_into(k, state, a1);
        let act = self.params.activation(k);
        let alpha = self.cfg.alpha_at(k);
        let (plus, minus) = match (self.chain, self.cfg.scheme) {
            (Some(chain_alpha), _) => {
                let pick = |s: &DyadicState, j: usize| {
                    if chain_alpha == 1.0 {
                        s.plus(j).clone()
                    } else {
                        s.minus(j).clone()
                    }
                };
                let current = pick(state, k);
                let above = pick(state, k + 1);
                let next = damped_step(self.params, k, &a, &current, &above, self.damping[k - 1]);
                if chain_alpha == 1.0 {
                    (next, state.minus(k).clone())
                } else {
                    (state.plus(k).clone(), next)
                }
            }
            (None, Scheme::Dpt) => {
                let fb = self.params.feedback(k, &state.delta(k + 1));
                nudged_pair(act, &a, &fb, 1.0 - alpha, alpha)
            }
            (None, _) => {
                let fb = self.params.feedback(k, &state.delta(k + 1));
                nudged_pair(act, &a, &fb, alpha, 1.0 - alpha)
            }
        };
        let change = plus.sub(state.plus(k)).norm().max(minus.sub(state.minus(k)).norm());
        state.set(k, plus, minus);
        change
    }

    fn output_step(&self, state: &mut DyadicState, y: &Vector, a1: &Vector) -> Result<f64> {
        let depth = self.params.depth();
        let a = self.drive_into(depth, state, a1);
        let (plus, minus) = match self.cfg.scheme {
            Scheme::Dpt => dpt_output_update(&a, y, self.cfg, self.loss),
            Scheme::Dp | Scheme::DpStabilized => dp_output_update(&a, y, self.cfg, self.loss)?,
        };
        let change = plus.sub(state.plus(depth)).norm().max(minus.sub(state.minus(depth)).norm());
        state.set(depth, plus, minus);
        Ok(change)
    }

    /// Sets the unused compartment of every hidden layer to `f_k(W_{k-1} s_{k-1})`.
    fn refresh_free(&self, state: &mut DyadicState, alpha: f64, a1: &Vector) {
        for k in 1..self.params.depth() {
            let free = self.params.activation(k).apply(&self.drive_into(k, state, a1));
            if alpha == 1.0 {
                let plus = state.plus(k).clone();
                state.set(k, plus, free);
            } else {
                let minus = state.minus(k).clone();
                state.set(k, free, minus);
            }
        }
    }
}

/// One-shot convenience wrapper around [`InferenceEngine`].
pub fn run_inference(
    params: &NetworkParams,
    x: &Vector,
    y: &Vector,
    cfg: &NudgeConfig,
    loss: LossKind,
) -> Result<InferenceReport> {
    InferenceEngine::new(params, cfg, loss)?.run(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_weights, init_weights_with_bias, mlp_specs, BiasMode};

    fn net(widths: &[usize], act: ActivationKind, seed: u64) -> NetworkParams {
        init_weights(&mlp_specs(widths, act).unwrap(), seed).unwrap()
    }

    fn sample(n: usize, seed: u64) -> Vector {
        (0..n).map(|i| ((i as f64 + 1.0) * 0.37 + seed as f64).sin()).collect()
    }

    #[test]
    fn tiny_beta_stays_near_forward_pass() {
        let p = net(&[4, 6, 5, 3], ActivationKind::Relu, 1);
        let x = sample(4, 0);
        let y = Vector::basis(3, 1);
        let free = p.forward(&x).unwrap();
        for scheme in [Scheme::Dp, Scheme::Dpt] {
            let cfg = NudgeConfig::new(scheme, 0.5, 1e-8).with_schedule(Schedule::RepeatedSweeps(3));
            let r = run_inference(&p, &x, &y, &cfg, LossKind::LeastSquares).unwrap();
            for k in 1..=3 {
                assert!(r.state.plus(k).sub(&free[k - 1]).norm() < 1e-7);
                assert!(r.state.minus(k).sub(&free[k - 1]).norm() < 1e-7);
            }
            assert!(!r.diverged);
        }
    }

    #[test]
    fn output_layer_must_be_linear() {
        let specs = vec![
            crate::model::LayerSpec::new(2, 2, ActivationKind::Relu),
            crate::model::LayerSpec::new(2, 2, ActivationKind::Relu),
        ];
        let p = init_weights(&specs, 0).unwrap();
        let cfg = NudgeConfig::new(Scheme::Dp, 0.5, 0.1);
        assert!(matches!(
            InferenceEngine::new(&p, &cfg, LossKind::LeastSquares),
            Err(InferenceError::UnsupportedOutputActivation(_))
        ));
    }

    #[test]
    fn repeated_sweeps_converge_for_symmetric_nudging() {
        let p = net(&[5, 8, 8, 3], ActivationKind::Relu, 2);
        let x = sample(5, 1);
        let y = Vector::basis(3, 0);
        let cfg = NudgeConfig::new(Scheme::Dp, 0.5, 0.5).with_schedule(Schedule::RepeatedSweeps(60));
        let r = run_inference(&p, &x, &y, &cfg, LossKind::LeastSquares).unwrap();
        assert!(r.residual < 1e-8, "residual {}", r.residual);
        assert_eq!(r.iterations, 60);
    }

    #[test]
    fn forward_passes_reach_same_fixed_point_as_sweeps() {
        let p = net(&[3, 4, 4, 2], ActivationKind::HardSigmoid, 3);
        let x = sample(3, 2);
        let y = Vector::from(vec![0.3, -0.2]);
        let sweeps = NudgeConfig::new(Scheme::Dpt, 0.5, 0.2).with_schedule(Schedule::RepeatedSweeps(80));
        let fwd = sweeps.clone().with_schedule(Schedule::ForwardPasses(200));
        let a = run_inference(&p, &x, &y, &sweeps, LossKind::LeastSquares).unwrap();
        let b = run_inference(&p, &x, &y, &fwd, LossKind::LeastSquares).unwrap();
        for k in 1..=3 {
            assert!(a.state.delta(k).sub(&b.state.delta(k)).norm() < 1e-9);
        }
    }

    #[test]
    fn stabilized_chain_and_free_compartments() {
        let p = net(&[4, 6, 6, 2], ActivationKind::Relu, 4);
        let x = sample(4, 3);
        let y = Vector::from(vec![1.0, -1.0]);
        // the inverted chain (α = 0) carries a negative loss and needs weak feedback
        for (alpha, beta) in [(0.0, 0.05), (1.0, 0.5)] {
            let cfg = NudgeConfig::new(Scheme::DpStabilized, alpha, beta).with_schedule(Schedule::RepeatedSweeps(200));
            let eng = InferenceEngine::new(&p, &cfg, LossKind::LeastSquares).unwrap();
            assert_eq!(eng.damping().len(), 2);
            let r = eng.run(&x, &y).unwrap();
            assert!(!r.diverged);
            assert!(r.residual < 1e-9, "α={alpha}: residual {}", r.residual);
            // the unused compartment is the free response to the chain below
            for k in 1..3 {
                let below = r.state.mean(k - 1, alpha);
                let free = p.activation(k).apply(&p.drive(k - 1, &below));
                let stored = if alpha == 1.0 { r.state.minus(k) } else { r.state.plus(k) };
                assert!(free.sub(stored).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn stabilized_interior_alpha_is_plain_dp() {
        let p = net(&[3, 5, 2], ActivationKind::Relu, 5);
        let x = sample(3, 4);
        let y = Vector::from(vec![0.5, 0.0]);
        let stab = NudgeConfig::new(Scheme::DpStabilized, 0.5, 0.3).with_schedule(Schedule::RepeatedSweeps(5));
        let mut dp = stab.clone();
        dp.scheme = Scheme::Dp;
        let a = run_inference(&p, &x, &y, &stab, LossKind::LeastSquares).unwrap();
        let b = run_inference(&p, &x, &y, &dp, LossKind::LeastSquares).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn divergence_is_detected() {
        let specs = mlp_specs(&[1, 1, 1], ActivationKind::Identity).unwrap();
        let mut p = init_weights(&specs, 0).unwrap();
        p.weights_mut()[0].as_mut_slice()[0] = 1.0;
        p.weights_mut()[1].as_mut_slice()[0] = 10.0;
        let cfg = NudgeConfig::new(Scheme::Dp, 1.0, 0.9).with_schedule(Schedule::RepeatedSweeps(100));
        let r = run_inference(&p, &Vector::from(vec![1.0]), &Vector::from(vec![0.0]), &cfg, LossKind::LeastSquares)
            .unwrap();
        assert!(r.diverged);
        assert!(r.iterations < 100);
    }

    #[test]
    fn bias_mode_runs() {
        let specs = mlp_specs(&[3, 4, 2], ActivationKind::Relu).unwrap();
        let p = init_weights_with_bias(&specs, BiasMode::Augmented, 1).unwrap();
        let cfg = NudgeConfig::new(Scheme::Dpt, 0.5, 0.1);
        let r = run_inference(&p, &sample(3, 0), &Vector::basis(2, 0), &cfg, LossKind::CrossEntropy).unwrap();
        assert!(r.state.is_finite());
    }

    #[test]
    fn target_dimension_is_checked() {
        let p = net(&[2, 3, 2], ActivationKind::Relu, 0);
        let cfg = NudgeConfig::new(Scheme::Dp, 0.5, 0.1);
        assert!(run_inference(&p, &sample(2, 0), &Vector::zeros(3), &cfg, LossKind::LeastSquares).is_err());
    }
}
