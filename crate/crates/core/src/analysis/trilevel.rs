use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::linalg::{symmetric_eigenvalues, LinalgError, Matrix, Vector};

/// Quadratic three-level model: input `x`, hidden `z` with potential
/// `G(z) = ½zᵀH_Gz + b_Gᵀz`, output `y` with potential
/// `F(y) = ½yᵀH_Fy + b_Fᵀy` coupled by `−yᵀWz̄`, and loss
/// `ℓ(y) = ½yᵀH_ℓy + b_ℓᵀy` weighted by β.
#[derive(Debug, Clone, PartialEq)]
pub struct TrilevelInstance {
    pub h_loss: Matrix,
    pub b_loss: Vector,
    pub h_f: Matrix,
    pub b_f: Vector,
    pub h_g: Matrix,
    pub b_g: Vector,
    /// Maps hidden to output, `dim_y × dim_z`.
    pub w: Matrix,
    pub x: Vector,
}

/// Which relaxation produces the output-layer difference `y⁺ − y⁻`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relaxation {
    Arovr,
    Sprovr,
}

impl TrilevelInstance {
    /// Scalar instance with `H_F = H_ℓ = H_G = 1` and zero offsets.
    pub fn scalar(w: f64) -> Self {
        let one = || Matrix::identity(1);
        TrilevelInstance {
            h_loss: one(),
            b_loss: Vector::zeros(1),
            h_f: one(),
            b_f: Vector::zeros(1),
            h_g: one(),
            b_g: Vector::zeros(1),
            w: Matrix::from_rows(&[vec![w]]),
            x: Vector::zeros(1),
        }
    }

    /// Random instance with `H_F, H_G ⪰ I`, `0 ⪯ H_ℓ ⪯ I` and `W` scaled by
    /// `w_scale`.
    pub fn random(dim_y: usize, dim_z: usize, w_scale: f64, rng: &mut impl Rng) -> Self {
        let mut normal = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let spd = |a: Matrix, shift: f64| {
            let mut h = a.matmul(&a.transpose()).expect("square").scale(1.0 / a.cols() as f64);
            h.axpy(shift, &Matrix::identity(a.rows()));
            h
        };
        let a = normal(dim_y, dim_y);
        let mut h_loss = spd(a, 0.0);
        let top = symmetric_eigenvalues(&h_loss).expect("square")[dim_y - 1];
        if top > 1.0 {
            h_loss = h_loss.scale(1.0 / top);
        }
        let h_f = spd(normal(dim_y, dim_y), 1.0);
        let h_g = spd(normal(dim_z, dim_z), 1.0);
        let w = normal(dim_y, dim_z).scale(w_scale / (dim_z as f64).sqrt());
        let vecs = normal(4, dim_y.max(dim_z));
        let take = |i: usize, n: usize| Vector::from(vecs.row(i)[..n].to_vec());
        TrilevelInstance {
            h_loss,
            b_loss: take(0, dim_y),
            h_f,
            b_f: take(1, dim_y),
            h_g,
            b_g: take(2, dim_z),
            w,
            x: take(3, dim_z),
        }
    }

    pub fn dim_y(&self) -> usize {
        self.b_f.dim()
    }

    pub fn dim_z(&self) -> usize {
        self.b_g.dim()
    }

    fn validate(&self) -> Result<()> {
        let (ny, nz) = (self.dim_y(), self.dim_z());
        let ok = self.h_loss.shape() == (ny, ny)
            && self.b_loss.dim() == ny
            && self.h_f.shape() == (ny, ny)
            && self.h_g.shape() == (nz, nz)
            && self.w.shape() == (ny, nz)
            && self.x.dim() == nz;
        if ok {
            Ok(())
        } else {
            Err(AnalysisError::InvalidInstance("inconsistent trilevel dimensions".into()))
        }
    }

    pub fn closed_form(&self, relaxation: Relaxation, alpha: f64, beta: f64) -> Result<(Matrix, Vector)> {
        match relaxation {
            Relaxation::Arovr => arovr_delta_closed_form(self, alpha, beta),
            Relaxation::Sprovr => sprovr_delta_closed_form(self, alpha, beta),
        }
    }
}

fn singular(what: &'static str) -> impl Fn(LinalgError) -> AnalysisError {
    move |e| match e {
        LinalgError::Singular { .. } => AnalysisError::SingularSystem(what),
        other => other.into(),
    }
}

/// `M`, `v` with `y⁺ − y⁻ = M W z̄ + v` for the asymmetric relaxation:
///
/// `M = −(H_F + αβH_ℓ)⁻¹ βH_ℓ (H_F − ᾱβH_ℓ)⁻¹`,
/// `v = −M b_F − β(α(H_F + αβH_ℓ)⁻¹ + ᾱ(H_F − ᾱβH_ℓ)⁻¹) b_ℓ`.
pub fn arovr_delta_closed_form(inst: &TrilevelInstance, alpha: f64, beta: f64) -> Result<(Matrix, Vector)> {
    inst.validate()?;
    let hl = inst.h_loss.scale(beta);
    let mut plus = inst.h_f.clone();
    plus.axpy(alpha, &hl);
    let mut minus = inst.h_f.clone();
    minus.axpy(-(1.0 - alpha), &hl);
    let plus_inv = plus.inverse().map_err(singular("H_F + αβH_ℓ"))?;
    let minus_inv = minus.inverse().map_err(singular("H_F − ᾱβH_ℓ"))?;
    let m = plus_inv.matmul(&hl)?.matmul(&minus_inv)?.scale(-1.0);
    let mut mp = plus_inv.scale(alpha);
    mp.axpy(1.0 - alpha, &minus_inv);
    let bl = inst.b_loss.scale(beta);
    let v = m.matvec(&inst.b_f)?.scale(-1.0).sub(&mp.matvec(&bl)?);
    Ok((m, v))
}

/// `M`, `v` with `y⁺ − y⁻ = M W z̄ + v` for the saddle-point relaxation:
///
/// `M = −H_F⁻¹ βH_ℓ A⁻¹` with `A = (2α − 1)βH_ℓ + H_F`,
/// `v = M(−b_F − (2α − 1)βb_ℓ) − H_F⁻¹βb_ℓ`.
pub fn sprovr_delta_closed_form(inst: &TrilevelInstance, alpha: f64, beta: f64) -> Result<(Matrix, Vector)> {
    inst.validate()?;
    let hl = inst.h_loss.scale(beta);
    let c = 2.0 * alpha - 1.0;
    let mut a = inst.h_f.clone();
    a.axpy(c, &hl);
    let a_inv = a.inverse().map_err(singular("(2α−1)βH_ℓ + H_F"))?;
    let f_inv = inst.h_f.inverse().map_err(singular("H_F"))?;
    let m = f_inv.matmul(&hl)?.matmul(&a_inv)?.scale(-1.0);
    let bl = inst.b_loss.scale(beta);
    let shifted = Vector::lincomb(-1.0, &inst.b_f, -c, &bl);
    let v = m.matvec(&shifted)?.sub(&f_inv.matvec(&bl)?);
    Ok((m, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// `‖z̄^{(t+1)} − z̄^{(t)}‖` of the last step.
    pub fixed_point_residual: f64,
    /// Spectral radius of the linear iteration map.
    pub spectral_factor: f64,
    pub diverged: bool,
    pub residuals: Vec<f64>,
}

/// Iterates `z̄ ← H_G⁻¹(x − b_G + (2α′ − 1) Wᵀ(M W z̄ + v))` from the free
/// state `H_G⁻¹(x − b_G)`.
///
/// The map is linear with matrix `T = (2α′ − 1) H_G⁻¹WᵀMW`. `M` is
/// symmetric for both relaxations, so with `H_G = LLᵀ` the matrix `T` is
/// similar to the symmetric `(2α′ − 1) L⁻¹WᵀMWL⁻ᵀ`, whose largest absolute
/// eigenvalue is reported as `spectral_factor`. The run counts as diverged
/// when it produces non-finite values or its last step is longer than its
/// first.
pub fn trilevel_fixed_point_check(
    inst: &TrilevelInstance,
    relaxation: Relaxation,
    alpha: f64,
    alpha_hidden: f64,
    beta: f64,
    iters: usize,
) -> Result<FixedPointReport> {
    let (m, v) = inst.closed_form(relaxation, alpha, beta)?;
    let c = 2.0 * alpha_hidden - 1.0;
    let chol = inst.h_g.cholesky()?;
    let wt = inst.w.transpose();
    let core = wt.matmul(&m)?.matmul(&inst.w)?;
    // X = L⁻¹C, then L⁻¹Xᵀ = L⁻¹CᵀL⁻ᵀ.
    let nz = inst.dim_z();
    let ct = core.transpose();
    let x_cols: Vec<Vector> = (0..nz).map(|j| chol.forward_solve(ct.row(j))).collect();
    let mut half = Matrix::zeros(nz, nz);
    for j in 0..nz {
        let row_j: Vec<f64> = x_cols.iter().map(|col| col[j]).collect();
        let out = chol.forward_solve(&row_j);
        for i in 0..nz {
            half[(i, j)] = out[i];
        }
    }
    let sym = Matrix::from_fn(nz, nz, |i, j| 0.5 * c * (half[(i, j)] + half[(j, i)]));
    let eig = symmetric_eigenvalues(&sym)?;
    let spectral_factor = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));

    let base = inst.x.sub(&inst.b_g);
    let mut z = chol.solve(&base)?;
    let mut residuals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let delta = m.matvec(&inst.w.matvec(&z)?)?.add(&v);
        let mut rhs = base.clone();
        rhs.axpy(c, &wt.matvec(&delta)?);
        let next = chol.solve(&rhs)?;
        let r = next.sub(&z).norm();
        residuals.push(r);
        z = next;
        if !r.is_finite() {
            break;
        }
    }
    let last = residuals.last().copied().unwrap_or(0.0);
    let first = residuals.first().copied().unwrap_or(0.0);
    Ok(FixedPointReport {
        fixed_point_residual: last,
        spectral_factor,
        diverged: !last.is_finite() || !z.is_finite() || last > first,
        residuals,
    })
}
