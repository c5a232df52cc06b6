use super::{LearningError, LossKind, Result};
use crate::inference::{DyadicState, NudgeConfig};
use crate::linalg::{Matrix, Vector};
use crate::model::NetworkParams;

/// One matrix per weight layer, aligned with [`NetworkParams::weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    layers: Vec<Matrix>,
}

impl GradientEstimate {
    pub fn new(layers: Vec<Matrix>) -> Self {
        GradientEstimate { layers }
    }

    pub fn zeros_like(params: &NetworkParams) -> Self {
        GradientEstimate {
            layers: params.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
        }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    pub fn scale(&mut self, c: f64) {
        for m in &mut self.layers {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &GradientEstimate) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.axpy(c, b);
        }
    }

    pub fn check_shapes(&self, params: &NetworkParams) -> Result<()> {
        if self.layers.len() != params.depth() {
            return Err(LearningError::LayerCount {
                expected: params.depth(),
                got: self.layers.len(),
            });
        }
        for (k, (g, w)) in self.layers.iter().zip(params.weights()).enumerate() {
            if g.shape() != w.shape() {
                return Err(LearningError::ShapeMismatch {
                    layer: k,
                    expected: w.shape(),
                    got: g.shape(),
                });
            }
        }
        Ok(())
    }

    /// Adds `c · (−1/β) δ_{k+1} s̄_kᵀ` for every layer.
    pub(crate) fn add_dyadic(&mut self, c: f64, params: &NetworkParams, state: &DyadicState, cfg: &NudgeConfig) {
        let scale = -c / cfg.beta;
        for k in 0..params.depth() {
            let below = if k == 0 {
                state.input().clone()
            } else {
                state.mean(k, cfg.alpha_at(k))
            };
            let input = params.layer_input(&below);
            self.layers[k].add_outer(scale, &state.delta(k + 1), &input);
        }
    }
}

/// `ĝ_k = −(1/β) δ_{k+1} s̄_kᵀ`, with `s̄_0 = x`. As β → 0 this tends to the
/// gradient of the unweighted loss.
pub fn weight_gradient(params: &NetworkParams, state: &DyadicState, cfg: &NudgeConfig) -> Result<GradientEstimate> {
    if !state.is_finite() || state.max_norm() > cfg.divergence_threshold {
        return Err(LearningError::DivergedState);
    }
    if state.depth() != params.depth() {
        return Err(LearningError::LayerCount {
            expected: params.depth(),
            got: state.depth(),
        });
    }
    let mut g = GradientEstimate::zeros_like(params);
    g.add_dyadic(1.0, params, state, cfg);
    Ok(g)
}

/// Reverse-mode gradient of the unweighted loss `ℓ(s_L(x), y)`.
pub fn backprop_oracle(params: &NetworkParams, x: &Vector, y: &Vector, loss: LossKind) -> Result<GradientEstimate> {
    let (pre, states) = params.forward_with_preactivations(x)?;
    let depth = params.depth();
    let mut g = GradientEstimate::zeros_like(params);
    let out_act = params.activation(depth);
    let mut err: Vector = loss
        .grad(&states[depth - 1], y)
        .zip_map(&pre[depth - 1], |e, a| e * out_act.derivative(a));
    for k in (0..depth).rev() {
        let below = if k == 0 { x.clone() } else { states[k - 1].clone() };
        g.layers[k].add_outer(1.0, &err, &params.layer_input(&below));
        if k > 0 {
            let act = params.activation(k);
            err = params.feedback(k, &err).zip_map(&pre[k - 1], |e, a| e * act.derivative(a));
        }
    }
    Ok(g)
}

/// Central differences `(ℓ(W + hE) − ℓ(W − hE)) / 2h` for every weight entry.
pub fn finite_difference_oracle(
    params: &NetworkParams,
    x: &Vector,
    y: &Vector,
    loss: LossKind,
    h: f64,
) -> Result<GradientEstimate> {
    if !(h > 0.0) {
        return Err(LearningError::InvalidConfig(format!("step {h} must be positive")));
    }
    let mut work = params.clone();
    let mut g = GradientEstimate::zeros_like(params);
    let eval = |p: &NetworkParams| -> Result<f64> { Ok(loss.value(&p.predict(x)?, y)) };
    for k in 0..params.depth() {
        for i in 0..params.weights()[k].as_slice().len() {
            let w0 = params.weights()[k].as_slice()[i];
            work.weights_mut()[k].as_mut_slice()[i] = w0 + h;
            let up = eval(&work)?;
            work.weights_mut()[k].as_mut_slice()[i] = w0 - h;
            let down = eval(&work)?;
            work.weights_mut()[k].as_mut_slice()[i] = w0;
            g.layers[k].as_mut_slice()[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{run_inference, Scheme};
    use crate::model::{init_weights, mlp_specs, ActivationKind, BiasMode, LayerSpec};

    fn scalar_net(w: f64) -> NetworkParams {
        NetworkParams::new(
            vec![LayerSpec::new(1, 1, ActivationKind::Identity)],
            vec![Matrix::from_rows(&[vec![w]])],
            BiasMode::Off,
        )
        .unwrap()
    }

    #[test]
    fn zero_delta_gives_zero_gradient() {
        let p = init_weights(&mlp_specs(&[3, 4, 2], ActivationKind::Relu).unwrap(), 1).unwrap();
        let st = DyadicState::from_forward(&p, &Vector::from(vec![1.0, 2.0, 3.0])).unwrap();
        let g = weight_gradient(&p, &st, &NudgeConfig::new(Scheme::Dp, 0.5, 0.1)).unwrap();
        assert!(g.layers().iter().all(|m| m.frobenius_norm() == 0.0));
    }

    #[test]
    fn outer_product_example() {
        let p = NetworkParams::new(
            vec![LayerSpec::new(2, 2, ActivationKind::Identity)],
            vec![Matrix::zeros(2, 2)],
            BiasMode::Off,
        )
        .unwrap();
        let st = DyadicState::from_parts(
            Vector::from(vec![2.0, 3.0]),
            vec![Vector::from(vec![1.0, 0.0])],
            vec![Vector::zeros(2)],
        );
        let g = weight_gradient(&p, &st, &NudgeConfig::new(Scheme::Dpt, 0.5, 1.0)).unwrap();
        assert_eq!(g.layers()[0].as_slice(), &[-2.0, -3.0, 0.0, 0.0]);
    }

    #[test]
    fn single_layer_adjoint_matches_backprop_exactly() {
        let p = scalar_net(1.0);
        let x = Vector::from(vec![1.0]);
        let y = Vector::zeros(1);
        let cfg = NudgeConfig::new(Scheme::Dpt, 0.5, 0.1);
        let r = run_inference(&p, &x, &y, &cfg, LossKind::LeastSquares).unwrap();
        assert!((r.state.delta(1)[0] + 0.1).abs() < 1e-15);
        let g = weight_gradient(&p, &r.state, &cfg).unwrap();
        assert!((g.layers()[0][(0, 0)] - 1.0).abs() < 1e-12);
        let bp = backprop_oracle(&p, &x, &y, LossKind::LeastSquares).unwrap();
        assert_eq!(bp.layers()[0][(0, 0)], 1.0);
    }

    #[test]
    fn diverged_state_is_rejected() {
        let p = scalar_net(1.0);
        let st = DyadicState::from_parts(Vector::from(vec![1.0]), vec![Vector::from(vec![f64::NAN])], vec![Vector::zeros(1)]);
        assert!(matches!(
            weight_gradient(&p, &st, &NudgeConfig::new(Scheme::Dp, 0.5, 0.1)),
            Err(LearningError::DivergedState)
        ));
    }

    #[test]
    fn single_layer_backprop_closed_form() {
        let p = NetworkParams::new(
            vec![LayerSpec::new(2, 1, ActivationKind::Identity)],
            vec![Matrix::from_rows(&[vec![0.5, -1.0]])],
            BiasMode::Off,
        )
        .unwrap();
        let x = Vector::from(vec![2.0, 1.0]);
        let y = Vector::from(vec![1.0]);
        // a = 0, (a − y) xᵀ = [−2, −1]
        let g = backprop_oracle(&p, &x, &y, LossKind::LeastSquares).unwrap();
        assert_eq!(g.layers()[0].as_slice(), &[-2.0, -1.0]);
    }

    #[test]
    fn finite_differences_exact_on_linear_scalar() {
        let p = scalar_net(0.7);
        let x = Vector::from(vec![1.3]);
        let y = Vector::from(vec![0.2]);
        let fd = finite_difference_oracle(&p, &x, &y, LossKind::LeastSquares, 1e-4).unwrap();
        let exact = (0.7 * 1.3 - 0.2) * 1.3;
        assert!((fd.layers()[0][(0, 0)] - exact).abs() < 1e-8);
        assert!(finite_difference_oracle(&p, &x, &y, LossKind::LeastSquares, 0.0).is_err());
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let p = init_weights(&mlp_specs(&[3, 5, 2], ActivationKind::Relu).unwrap(), 2).unwrap();
        let x = Vector::from(vec![0.3, -0.1, 0.8]);
        let y = p.predict(&x).unwrap();
        let bp = backprop_oracle(&p, &x, &y, LossKind::LeastSquares).unwrap();
        let fd = finite_difference_oracle(&p, &x, &y, LossKind::LeastSquares, 1e-5).unwrap();
        for (a, b) in bp.layers().iter().zip(fd.layers()) {
            assert_eq!(a.frobenius_norm(), 0.0);
            assert!(b.as_slice().iter().all(|v| v.abs() <= 1e-9));
        }
    }

    #[test]
    fn backprop_with_bias_matches_differences() {
        let specs = mlp_specs(&[3, 4, 2], ActivationKind::LeakyRelu(0.2)).unwrap();
        let p = crate::model::init_weights_with_bias(&specs, BiasMode::Augmented, 3).unwrap();
        let x = Vector::from(vec![0.5, -0.3, 0.1]);
        let y = Vector::basis(2, 1);
        let bp = backprop_oracle(&p, &x, &y, LossKind::CrossEntropy).unwrap();
        let fd = finite_difference_oracle(&p, &x, &y, LossKind::CrossEntropy, 1e-5).unwrap();
        for (a, b) in bp.layers().iter().zip(fd.layers()) {
            assert!(a.sub(b).unwrap().frobenius_norm() <= 1e-8 * (1.0 + a.frobenius_norm()));
        }
    }
}
