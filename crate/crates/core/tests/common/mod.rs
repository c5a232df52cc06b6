//! Reference implementations used by the integration tests. Everything here
//! is written with plain loops over `Vec<f64>` and avoids the library's own
//! factorizations, so agreement is a meaningful check.
#![allow(dead_code)]

use std::path::PathBuf;

use dualprop::analysis::TrilevelInstance;
use dualprop::harness::Dataset;
use dualprop::learning::LossKind;
use dualprop::model::{init_weights, mlp_specs, ActivationKind, NetworkParams};
use dualprop::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(n: usize, rng: &mut impl Rng) -> Vector {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn naive_matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..m.cols() {
            *o += m[(i, j)] * v[j];
        }
    }
    out
}

pub fn naive_matvec_t(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * v[i];
        }
    }
    out
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum())
}

/// Singular values by one-sided (Hestenes) Jacobi rotations, descending.
pub fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut cols_data: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = cols_data[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols_data[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols_data[p].iter().zip(&cols_data[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (cols_data[p][i], cols_data[q][i]);
                    cols_data[p][i] = c * x - s * y;
                    cols_data[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols_data.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn max_singular_value(m: &Matrix) -> f64 {
    jacobi_singular_values(m)[0]
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    })
    .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, p);
        let pivot = m[k][k];
        assert!(pivot.abs() > 1e-300, "singular system in oracle");
        for i in k + 1..n {
            let f = m[i][k] / pivot;
            if f != 0.0 {
                for j in k..=n {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

pub fn relu_net(widths: &[usize], seed: u64) -> NetworkParams {
    init_weights(&mlp_specs(widths, ActivationKind::Relu).unwrap(), seed).unwrap()
}

fn loss_grad(loss: LossKind, out: &[f64], y: &[f64]) -> Vec<f64> {
    match loss {
        LossKind::LeastSquares => out.iter().zip(y).map(|(o, t)| o - t).collect(),
        LossKind::CrossEntropy => {
            let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = out.iter().map(|o| (o - m).exp()).sum();
            out.iter().zip(y).map(|(o, t)| (o - m).exp() / z - t).collect()
        }
    }
}

pub fn loss_value(loss: LossKind, out: &[f64], y: &[f64]) -> f64 {
    match loss {
        LossKind::LeastSquares => 0.5 * out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>(),
        LossKind::CrossEntropy => {
            let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + out.iter().map(|o| (o - m).exp()).sum::<f64>().ln();
            lse * y.iter().sum::<f64>() - out.iter().zip(y).map(|(o, t)| o * t).sum::<f64>()
        }
    }
}

/// Back-propagation written out with index loops; bias-free networks only.
pub fn hand_backprop(params: &NetworkParams, x: &[f64], y: &[f64], loss: LossKind) -> Vec<Matrix> {
    let depth = params.depth();
    let mut inputs: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut pre: Vec<Vec<f64>> = Vec::new();
    for k in 0..depth {
        let a = naive_matvec(&params.weights()[k], &inputs[k]);
        let act = params.activation(k + 1);
        inputs.push(a.iter().map(|&v| act.apply_scalar(v)).collect());
        pre.push(a);
    }
    let mut grads = vec![Matrix::zeros(0, 0); depth];
    let mut err = loss_grad(loss, &inputs[depth], y);
    for k in (0..depth).rev() {
        let act = params.activation(k + 1);
        let local: Vec<f64> = err.iter().zip(&pre[k]).map(|(e, &a)| e * act.derivative(a)).collect();
        grads[k] = Matrix::from_fn(local.len(), inputs[k].len(), |i, j| local[i] * inputs[k][j]);
        err = naive_matvec_t(&params.weights()[k], &local);
    }
    grads
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖` over all layers.
pub fn relative_error(a: &[Matrix], b: &[Matrix]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.shape(), y.shape());
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    (num / den).sqrt()
}

pub fn cosine(a: &Matrix, b: &Matrix) -> f64 {
    let dot: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum();
    dot / (a.frobenius_norm() * b.frobenius_norm())
}

fn shifted(h: &Matrix, c: f64, l: &Matrix) -> Vec<Vec<f64>> {
    (0..h.rows()).map(|i| (0..h.cols()).map(|j| h[(i, j)] + c * l[(i, j)]).collect()).collect()
}

/// `y⁺ − y⁻` for the asymmetric relaxation at hidden state `z`, from the two
/// perturbed minimizations `argmin ±(α or ᾱ)βℓ(y) + F(y) − yᵀWz`.
pub fn arovr_direct(inst: &TrilevelInstance, alpha: f64, beta: f64, z: &[f64]) -> Vec<f64> {
    let wz = naive_matvec(&inst.w, z);
    let n = wz.len();
    let rhs = |c: f64| -> Vec<f64> { (0..n).map(|i| wz[i] - inst.b_f[i] - c * beta * inst.b_loss[i]).collect() };
    let plus = gauss_solve(&shifted(&inst.h_f, alpha * beta, &inst.h_loss), &rhs(alpha));
    let minus = gauss_solve(&shifted(&inst.h_f, -(1.0 - alpha) * beta, &inst.h_loss), &rhs(-(1.0 - alpha)));
    plus.iter().zip(&minus).map(|(p, m)| p - m).collect()
}

/// `y⁺ − y⁻` for the saddle-point relaxation `βℓ(αy⁺ + ᾱy⁻) + F(y⁺) − F(y⁻)
/// − (y⁺ − y⁻)ᵀWz`, from its joint stationarity system.
pub fn sprovr_direct(inst: &TrilevelInstance, alpha: f64, beta: f64, z: &[f64]) -> Vec<f64> {
    let wz = naive_matvec(&inst.w, z);
    let n = wz.len();
    let ab = 1.0 - alpha;
    let hl = |i: usize, j: usize| beta * inst.h_loss[(i, j)];
    let mut a = vec![vec![0.0; 2 * n]; 2 * n];
    let mut b = vec![0.0; 2 * n];
    for i in 0..n {
        for j in 0..n {
            // α·∇ℓ(ȳ) + ∇F(y⁺) − Wz = 0
            a[i][j] = alpha * alpha * hl(i, j) + inst.h_f[(i, j)];
            a[i][n + j] = alpha * ab * hl(i, j);
            // ᾱ·∇ℓ(ȳ) − ∇F(y⁻) + Wz = 0
            a[n + i][j] = ab * alpha * hl(i, j);
            a[n + i][n + j] = ab * ab * hl(i, j) - inst.h_f[(i, j)];
        }
        b[i] = wz[i] - inst.b_f[i] - alpha * beta * inst.b_loss[i];
        b[n + i] = -wz[i] + inst.b_f[i] - ab * beta * inst.b_loss[i];
    }
    let sol = gauss_solve(&a, &b);
    (0..n).map(|i| sol[i] - sol[n + i]).collect()
}

/// Spectral radius of `c·H_G⁻¹WᵀMW` by plain power iteration on the
/// non-symmetric matrix.
pub fn fixed_point_radius(inst: &TrilevelInstance, m: &Matrix, c: f64) -> f64 {
    let nz = inst.dim_z();
    let hg = to_rows(&inst.h_g);
    let apply = |v: &[f64]| -> Vec<f64> {
        let wv = naive_matvec(&inst.w, v);
        let mwv = naive_matvec(m, &wv);
        let back: Vec<f64> = naive_matvec_t(&inst.w, &mwv).iter().map(|x| c * x).collect();
        gauss_solve(&hg, &back)
    };
    let mut v: Vec<f64> = (0..nz).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut est = 0.0;
    for _ in 0..2000 {
        let w = apply(&v);
        let n2 = apply(&w);
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = n2.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nn == 0.0 {
            return 0.0;
        }
        est = (nn / nv).sqrt();
        v = n2.iter().map(|x| x / nn).collect();
    }
    est
}

/// MNIST directory from `DUALPROP_DATA`, falling back to the copy in the
/// repository.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("DUALPROP_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn dataset_accuracy_by_hand(params: &NetworkParams, data: &Dataset) -> f64 {
    let mut correct = 0;
    for (x, &label) in data.inputs().iter().zip(data.labels()) {
        let mut s = x.as_slice().to_vec();
        for k in 0..params.depth() {
            let a = naive_matvec(&params.weights()[k], &s);
            s = a.iter().map(|&v| params.activation(k + 1).apply_scalar(v)).collect();
        }
        let best = (0..s.len()).max_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
        correct += usize::from(best == label);
    }
    correct as f64 / data.len() as f64
}

fn quad(h: &Matrix, b: &[f64], c: f64, s: &[f64]) -> f64 {
    let hs = naive_matvec(h, s);
    0.5 * s.iter().zip(&hs).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(s).map(|(x, y)| x * y).sum::<f64>() + c
}

/// `αℓ(s⁺) + ᾱℓ(s⁻) + (E(s⁺) − E(s⁻))/β` with both states from direct solves
/// of `(H_E/β + γH_ℓ)s = −γb_ℓ − b_E/β`.
pub fn arovr_objective_direct(inst: &dualprop::analysis::QuadraticRelaxationInstance, alpha: f64, beta: f64) -> f64 {
    let n = inst.dim();
    let solve = |g: f64| {
        let a: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| inst.h_energy[(i, j)] / beta + g * inst.h_loss[(i, j)]).collect()).collect();
        let b: Vec<f64> = (0..n).map(|i| -g * inst.b_loss[i] - inst.b_energy[i] / beta).collect();
        gauss_solve(&a, &b)
    };
    let (p, m) = (solve(alpha), solve(alpha - 1.0));
    let loss = |s: &[f64]| quad(&inst.h_loss, inst.b_loss.as_slice(), inst.c_loss, s);
    let energy = |s: &[f64]| quad(&inst.h_energy, inst.b_energy.as_slice(), 0.0, s);
    alpha * loss(&p) + (1.0 - alpha) * loss(&m) + (energy(&p) - energy(&m)) / beta
}
