use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{quadratic, AnalysisError, Result, CURVATURE_MARGIN};
use crate::linalg::{ensure_positive_definite, LinalgError, Matrix, Vector};

/// Absolute tolerance for counting an ordering violation.
pub const PROP_TOL: f64 = 1e-9;

/// Quadratic loss `ℓ(s) = ½sᵀH_ℓs + b_ℓᵀs + c_ℓ` and energy
/// `E(s) = ½sᵀH_Es + b_Eᵀs`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRelaxationInstance {
    pub h_loss: Matrix,
    pub b_loss: Vector,
    pub c_loss: f64,
    pub h_energy: Matrix,
    pub b_energy: Vector,
}

impl QuadraticRelaxationInstance {
    pub fn new(h_loss: Matrix, b_loss: Vector, h_energy: Matrix, b_energy: Vector) -> Result<Self> {
        let n = b_loss.dim();
        if h_loss.shape() != (n, n) || h_energy.shape() != (n, n) || b_energy.dim() != n {
            return Err(AnalysisError::InvalidInstance("inconsistent dimensions".into()));
        }
        Ok(QuadraticRelaxationInstance {
            h_loss,
            b_loss,
            c_loss: 0.0,
            h_energy,
            b_energy,
        })
    }

    pub fn with_loss_offset(mut self, c: f64) -> Self {
        self.c_loss = c;
        self
    }

    /// `ℓ(s) = s²/2`, `E(s) = (s − 1)²/2` (up to a constant).
    pub fn scalar_example() -> Self {
        Self::new(
            Matrix::identity(1),
            Vector::zeros(1),
            Matrix::identity(1),
            Vector::from(vec![-1.0]),
        )
        .expect("consistent")
    }

    /// Random instance with `0 ⪯ H_ℓ ⪯ I`, `H_E ⪰ I` and a non-negative
    /// loss `ℓ(s) = ½(s − t)ᵀH_ℓ(s − t)`. All subproblems stay convex for
    /// β < 1.
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let a = random_matrix(dim, dim, rng);
        let mut h_loss = a.matmul(&a.transpose()).expect("square");
        let top = crate::linalg::symmetric_eigenvalues(&h_loss).expect("square")[dim - 1];
        if top > 1.0 {
            h_loss = h_loss.scale(1.0 / top);
        }
        let b = random_matrix(dim, dim, rng).scale(0.7);
        let mut h_energy = b.matmul(&b.transpose()).expect("square");
        h_energy.axpy(1.0, &Matrix::identity(dim));
        let target = random_vector(dim, rng);
        let ht = h_loss.matvec_unchecked(&target);
        let c_loss = 0.5 * target.dot(&ht);
        QuadraticRelaxationInstance {
            h_loss,
            b_loss: ht.scale(-1.0),
            c_loss,
            h_energy,
            b_energy: random_vector(dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.b_loss.dim()
    }

    pub fn loss(&self, s: &Vector) -> f64 {
        quadratic(&self.h_loss, &self.b_loss, self.c_loss, s)
    }

    pub fn energy(&self, s: &Vector) -> f64 {
        quadratic(&self.h_energy, &self.b_energy, 0.0, s)
    }

    /// `argmin_s γℓ(s) + E(s)/β` for any real γ (negative γ means the
    /// maximizing side).
    pub fn tilted_minimizer(&self, gamma: f64, beta: f64) -> Result<Vector> {
        let mut h = self.h_energy.scale(1.0 / beta);
        h.axpy(gamma, &self.h_loss);
        ensure_positive_definite(&h, CURVATURE_MARGIN).map_err(|e| match e {
            LinalgError::NotPositiveDefinite { min_eig } => AnalysisError::IndefiniteSubproblem {
                which: if gamma >= 0.0 { "nudged" } else { "anti-nudged" },
                min_eig,
            },
            other => other.into(),
        })?;
        let rhs = Vector::lincomb(-gamma, &self.b_loss, -1.0 / beta, &self.b_energy);
        Ok(h.cholesky()?.solve(&rhs)?)
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) / (cols as f64).sqrt())
}

fn random_vector(n: usize, rng: &mut impl Rng) -> Vector {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `(s⁺, s⁻)` of the asymmetric relaxation: `s⁺ = argmin αℓ + E/β`,
/// `s⁻ = argmin −ᾱℓ + E/β`.
pub fn arovr_states(inst: &QuadraticRelaxationInstance, alpha: f64, beta: f64) -> Result<(Vector, Vector)> {
    Ok((
        inst.tilted_minimizer(alpha, beta)?,
        inst.tilted_minimizer(alpha - 1.0, beta)?,
    ))
}

/// `J = αℓ(s⁺) + ᾱℓ(s⁻) + (E(s⁺) − E(s⁻))/β` at the minimizers of
/// [`arovr_states`]. At α = 1 this is the plain (one-sided) relaxation.
pub fn arovr_objective(inst: &QuadraticRelaxationInstance, alpha: f64, beta: f64) -> Result<f64> {
    let (p, m) = arovr_states(inst, alpha, beta)?;
    Ok(alpha * inst.loss(&p) + (1.0 - alpha) * inst.loss(&m) + (inst.energy(&p) - inst.energy(&m)) / beta)
}

/// Stationary point of `ℓ(αs⁺ + ᾱs⁻) + (E(s⁺) − E(s⁻))/β`, from the coupled
/// `2n × 2n` linear system.
pub fn sprovr_states(inst: &QuadraticRelaxationInstance, alpha: f64, beta: f64) -> Result<(Vector, Vector)> {
    let n = inst.dim();
    let a = alpha;
    let ab = 1.0 - alpha;
    let hl = &inst.h_loss;
    let he = &inst.h_energy;
    let k = Matrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        let coupling = [a, ab][bi] * [a, ab][bj] * hl[(ii, jj)];
        let energy = he[(ii, jj)] / beta;
        match (bi, bj) {
            (0, 0) => coupling + energy,
            (1, 1) => coupling - energy,
            _ => coupling,
        }
    });
    let rhs: Vector = (0..2 * n)
        .map(|i| {
            let ii = i % n;
            if i < n {
                -a * inst.b_loss[ii] - inst.b_energy[ii] / beta
            } else {
                -ab * inst.b_loss[ii] + inst.b_energy[ii] / beta
            }
        })
        .collect();
    let sol = k.solve(&rhs).map_err(|e| match e {
        LinalgError::Singular { .. } => AnalysisError::SingularSystem("saddle-point"),
        other => other.into(),
    })?;
    let sol = sol.into_vec();
    Ok((Vector::from(sol[..n].to_vec()), Vector::from(sol[n..].to_vec())))
}

/// `ℓ(αs⁺ + ᾱs⁻) + (E(s⁺) − E(s⁻))/β` at [`sprovr_states`].
pub fn sprovr_objective(inst: &QuadraticRelaxationInstance, alpha: f64, beta: f64) -> Result<f64> {
    let (p, m) = sprovr_states(inst, alpha, beta)?;
    let mean = Vector::lincomb(alpha, &p, 1.0 - alpha, &m);
    Ok(inst.loss(&mean) + (inst.energy(&p) - inst.energy(&m)) / beta)
}

/// The four loss values `ℓ(s_{α′}) ≤ ℓ(s_α) ≤ ℓ(s_{−ᾱ′}) ≤ ℓ(s_{−ᾱ})` for
/// `α ≤ α′`, where `s_γ = argmin γℓ + E/β`.
pub fn lemma_chain(inst: &QuadraticRelaxationInstance, alpha: f64, alpha2: f64, beta: f64) -> Result<[f64; 4]> {
    let at = |g: f64| -> Result<f64> { Ok(inst.loss(&inst.tilted_minimizer(g, beta)?)) };
    Ok([at(alpha2)?, at(alpha)?, at(alpha2 - 1.0)?, at(alpha - 1.0)?])
}

/// Direction in which J moves as α grows, across all instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaOrdering {
    NonIncreasing,
    NonDecreasing,
    Constant,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionSample {
    pub instance_id: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "J")]
    pub j: f64,
    /// Violations attributed to this evaluation.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub instances: usize,
    pub samples: Vec<PropositionSample>,
    pub violations: usize,
    pub max_violation: f64,
    /// Set by `check_prop1` only: ordering of the loss chain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma_violations: Option<usize>,
    /// Set by `check_prop1` only: empirical direction of J in α.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_ordering: Option<AlphaOrdering>,
}

impl PropositionReport {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.lemma_violations.unwrap_or(0) == 0
    }
}

struct Tally {
    count: usize,
    max: f64,
}

impl Tally {
    /// Records `lhs ≤ rhs`; returns whether it was violated.
    fn le(&mut self, lhs: f64, rhs: f64) -> bool {
        let excess = (lhs - rhs).max(0.0);
        self.max = self.max.max(excess);
        let bad = excess > PROP_TOL || lhs.is_nan() || rhs.is_nan();
        self.count += usize::from(bad);
        bad
    }
}

/// Checks, per instance:
///
/// * the lemma's loss chain for every pair `α ≤ α′` of the grid and every β;
/// * β-monotonicity of `β·J_{α,β}` (violations counted);
/// * the direction of J along the α grid, recorded but not asserted.
pub fn check_prop1(instances: &[QuadraticRelaxationInstance], alphas: &[f64], betas: &[f64]) -> Result<PropositionReport> {
    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    let mut betas = betas.to_vec();
    betas.sort_by(f64::total_cmp);
    let mut tally = Tally { count: 0, max: 0.0 };
    let mut lemma = Tally { count: 0, max: 0.0 };
    let mut samples = Vec::new();
    let (mut up, mut down) = (false, false);
    for (id, inst) in instances.iter().enumerate() {
        let mut table = vec![vec![0.0; betas.len()]; alphas.len()];
        for (i, &a) in alphas.iter().enumerate() {
            for (j, &b) in betas.iter().enumerate() {
                table[i][j] = arovr_objective(inst, a, b)?;
            }
        }
        for (i, &a) in alphas.iter().enumerate() {
            for (j, &b) in betas.iter().enumerate() {
                let mut bad = 0;
                for (j2, &b2) in betas.iter().enumerate().skip(j + 1) {
                    bad += usize::from(tally.le(b * table[i][j], b2 * table[i][j2]));
                }
                samples.push(PropositionSample {
                    instance_id: id,
                    alpha: a,
                    beta: b,
                    j: table[i][j],
                    violations: bad,
                });
            }
        }
        for &b in &betas {
            for (i, &a) in alphas.iter().enumerate() {
                for &a2 in &alphas[i..] {
                    let c = lemma_chain(inst, a, a2, b)?;
                    lemma.le(c[0], c[1]);
                    lemma.le(c[1], c[2]);
                    lemma.le(c[2], c[3]);
                }
            }
        }
        for j in 0..betas.len() {
            for i in 1..alphas.len() {
                let d = table[i][j] - table[i - 1][j];
                let scale = PROP_TOL * (1.0 + table[i][j].abs());
                up |= d > scale;
                down |= d < -scale;
            }
        }
    }
    let ordering = match (up, down) {
        (false, false) => AlphaOrdering::Constant,
        (true, false) => AlphaOrdering::NonDecreasing,
        (false, true) => AlphaOrdering::NonIncreasing,
        (true, true) => AlphaOrdering::Inconsistent,
    };
    Ok(PropositionReport {
        instances: instances.len(),
        samples,
        violations: tally.count,
        max_violation: tally.max.max(lemma.max),
        lemma_violations: Some(lemma.count),
        alpha_ordering: Some(ordering),
    })
}

/// `(α, β)` versus `(α′, β′)` with `(1 − α)β = (1 − α′)β′` and `β′ ≤ β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Pair {
    pub alpha: f64,
    pub beta: f64,
    pub alpha2: f64,
    pub beta2: f64,
}

impl Prop2Pair {
    /// Builds the pair from `(α′, β′)` and a larger `β`.
    pub fn from_primed(alpha2: f64, beta2: f64, beta: f64) -> Self {
        let abar = (1.0 - alpha2) * beta2 / beta;
        Prop2Pair {
            alpha: 1.0 - abar,
            beta,
            alpha2,
            beta2,
        }
    }
}

/// Checks `J_{α,β} ≤ J_{α′,β′}` for every instance and pair.
pub fn check_prop2(instances: &[QuadraticRelaxationInstance], pairs: &[Prop2Pair]) -> Result<PropositionReport> {
    for p in pairs {
        let lhs = (1.0 - p.alpha) * p.beta;
        let rhs = (1.0 - p.alpha2) * p.beta2;
        if (lhs - rhs).abs() > 1e-12 * (1.0 + lhs.abs()) || p.beta2 > p.beta {
            return Err(AnalysisError::InvalidInstance(format!(
                "pair {p:?} needs equal (1−α)β and β′ ≤ β"
            )));
        }
    }
    let mut tally = Tally { count: 0, max: 0.0 };
    let mut samples = Vec::new();
    for (id, inst) in instances.iter().enumerate() {
        for p in pairs {
            let j = arovr_objective(inst, p.alpha, p.beta)?;
            let j2 = arovr_objective(inst, p.alpha2, p.beta2)?;
            let bad = tally.le(j, j2);
            samples.push(PropositionSample {
                instance_id: id,
                alpha: p.alpha,
                beta: p.beta,
                j,
                violations: usize::from(bad),
            });
        }
    }
    Ok(PropositionReport {
        instances: instances.len(),
        samples,
        violations: tally.count,
        max_violation: tally.max,
        lemma_violations: None,
        alpha_ordering: None,
    })
}
