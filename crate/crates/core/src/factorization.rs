//! Sub-action mapping matrices, least-squares factored fits and the bounds
//! that accompany them.
//!
//! `Ψ` has one one-hot block per action dimension. `Ψ̃` keeps a leading
//! all-ones column and drops the first column of every block, which makes it
//! full column rank while spanning the same column space.

use crate::mdp::{mixed_radix_digits, FactoredActionSpace, QTable};
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

/// Relative singular-value cut-off used by every pseudoinverse here.
pub const PINV_RTOL: f64 = 1e-10;

/// Default residual tolerance for decomposability verdicts.
pub const DEFAULT_DECOMPOSABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

// ── Linear algebra helpers ──────────────────────────────────────────────

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Moore–Penrose pseudoinverse with singular values below `PINV_RTOL·σ_max` zeroed.
///
/// The SVD comes from faer: nalgebra 0.33's SVD returns wrong singular
/// values on some tall 0/1 designs with repeated singular values. nalgebra
/// is used only if faer fails to converge.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let Ok(svd) = to_faer(m).svd() else {
        return m.clone().pseudo_inverse(PINV_RTOL * m.amax()).unwrap_or_else(|_| DMatrix::zeros(c, r));
    };
    let (u, v) = (svd.U(), svd.V());
    let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let cut = PINV_RTOL * sv.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(c, r);
    for (k, &x) in sv.iter().enumerate() {
        if x > cut && x > 0.0 {
            for i in 0..c {
                let vi = v[(i, k)] / x;
                if vi != 0.0 {
                    for j in 0..r {
                        out[(i, j)] += vi * u[(j, k)];
                    }
                }
            }
        }
    }
    out
}

/// Numerical rank under the same cut-off as [`pinv`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = match to_faer(m).singular_values() {
        Ok(sv) => sv,
        Err(_) => m.clone().singular_values().iter().copied().collect(),
    };
    let cut = PINV_RTOL * sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&x| x > cut && x > 0.0).count()
}

/// Minimum-norm least-squares solution of `design · w ≈ y`.
pub fn lstsq_min_norm(design: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>, FactorError> {
    if design.nrows() != y.len() {
        return Err(FactorError::Shape(format!(
            "design has {} rows, target has {}",
            design.nrows(),
            y.len()
        )));
    }
    let w = pinv(design) * DMatrix::from_column_slice(y.len(), 1, y);
    Ok(w.column(0).iter().copied().collect())
}

// ── Ψ and Ψ̃ ─────────────────────────────────────────────────────────────

/// `|A| × Σ_d |A_d|` one-hot block matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubActionMappingMatrix {
    pub entries: DMatrix<f64>,
    pub space: FactoredActionSpace,
}

/// `|A| × (1 + Σ_d (|A_d| − 1))` condensed matrix; full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedMatrix {
    pub entries: DMatrix<f64>,
    pub space: FactoredActionSpace,
}

pub fn build_psi(space: &FactoredActionSpace) -> SubActionMappingMatrix {
    let cards = space.cardinalities();
    let cols: usize = cards.iter().sum();
    let mut m = DMatrix::zeros(space.total(), cols);
    for a in 0..space.total() {
        let sub = mixed_radix_digits(a, cards);
        let mut off = 0;
        for (d, &ad) in sub.iter().enumerate() {
            m[(a, off + ad)] = 1.0;
            off += cards[d];
        }
    }
    SubActionMappingMatrix { entries: m, space: space.clone() }
}

pub fn condensed_width(space: &FactoredActionSpace) -> usize {
    1 + space.cardinalities().iter().map(|c| c - 1).sum::<usize>()
}

/// Row `ψ̃(a)`: leading 1, then one indicator per non-reference sub-action.
pub fn psi_tilde_row(space: &FactoredActionSpace, a: usize) -> Vec<f64> {
    let cards = space.cardinalities();
    let mut row = vec![0.0; condensed_width(space)];
    row[0] = 1.0;
    let mut off = 1;
    for (d, &ad) in mixed_radix_digits(a, cards).iter().enumerate() {
        if ad > 0 {
            row[off + ad - 1] = 1.0;
        }
        off += cards[d] - 1;
    }
    row
}

pub fn build_psi_tilde(space: &FactoredActionSpace) -> CondensedMatrix {
    let w = condensed_width(space);
    let mut m = DMatrix::zeros(space.total(), w);
    for a in 0..space.total() {
        for (j, v) in psi_tilde_row(space, a).into_iter().enumerate() {
            m[(a, j)] = v;
        }
    }
    CondensedMatrix { entries: m, space: space.clone() }
}

/// `ΨΨ⁺`, the orthogonal projector onto linearly decomposable Q rows.
pub fn projection_matrix(space: &FactoredActionSpace) -> DMatrix<f64> {
    let psi = build_psi(space).entries;
    &psi * pinv(&psi)
}

/// Products of condensed columns across every subset of two or more
/// dimensions. Together with `Ψ̃` these span all of `R^{|A|}`.
pub fn interaction_columns(space: &FactoredActionSpace) -> Vec<Vec<f64>> {
    let cards = space.cardinalities();
    let dims = cards.len();
    let mut out = Vec::new();
    for mask in 1usize..(1 << dims) {
        if mask.count_ones() < 2 {
            continue;
        }
        let chosen: Vec<usize> = (0..dims).filter(|d| mask >> d & 1 == 1).collect();
        let radices: Vec<usize> = chosen.iter().map(|&d| cards[d] - 1).collect();
        let combos: usize = radices.iter().product();
        for k in 0..combos {
            let levels = mixed_radix_digits(k, &radices);
            let col = (0..space.total())
                .map(|a| {
                    let sub = mixed_radix_digits(a, cards);
                    let hit = chosen.iter().zip(&levels).all(|(&d, &l)| sub[d] == l + 1);
                    if hit { 1.0 } else { 0.0 }
                })
                .collect();
            out.push(col);
        }
    }
    out
}

// ── Fitting ─────────────────────────────────────────────────────────────

/// Condensed weights `w̃` of one state's factored fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactoredWeights {
    pub w_tilde: Vec<f64>,
    #[serde(skip)]
    pub space: FactoredActionSpace,
}

impl FactoredWeights {
    pub fn bias(&self) -> f64 {
        self.w_tilde[0]
    }

    /// `q_d(a_d)` with the reference sub-action pinned to 0; `Q̂(a) = bias + Σ_d q_d(a_d)`.
    pub fn components(&self) -> Vec<Vec<f64>> {
        let mut off = 1;
        self.space
            .cardinalities()
            .iter()
            .map(|&c| {
                let mut q = vec![0.0; c];
                q[1..].copy_from_slice(&self.w_tilde[off..off + c - 1]);
                off += c - 1;
                q
            })
            .collect()
    }

    /// `Ψ̃ · w̃`.
    pub fn reconstruct(&self) -> Vec<f64> {
        (0..self.space.total())
            .map(|a| {
                psi_tilde_row(&self.space, a)
                    .iter()
                    .zip(&self.w_tilde)
                    .map(|(x, w)| x * w)
                    .sum()
            })
            .collect()
    }
}

/// Reusable factored least-squares fitter for one action space.
#[derive(Debug, Clone)]
pub struct FactoredFitter {
    space: FactoredActionSpace,
    psi_tilde: DMatrix<f64>,
    psi_tilde_pinv: DMatrix<f64>,
}

impl FactoredFitter {
    pub fn new(space: &FactoredActionSpace) -> Self {
        let psi_tilde = build_psi_tilde(space).entries;
        let psi_tilde_pinv = pinv(&psi_tilde);
        Self { space: space.clone(), psi_tilde, psi_tilde_pinv }
    }

    pub fn fit(&self, q_values: &[f64]) -> Result<(FactoredWeights, Vec<f64>), FactorError> {
        if q_values.len() != self.space.total() {
            return Err(FactorError::Shape(format!(
                "Q row has {} entries, action space has {}",
                q_values.len(),
                self.space.total()
            )));
        }
        if q_values.iter().any(|v| !v.is_finite()) {
            return Err(FactorError::Argument("Q row is not finite".into()));
        }
        let q = DMatrix::from_column_slice(q_values.len(), 1, q_values);
        let w = &self.psi_tilde_pinv * q;
        let fitted = &self.psi_tilde * &w;
        Ok((
            FactoredWeights { w_tilde: w.column(0).iter().copied().collect(), space: self.space.clone() },
            fitted.column(0).iter().copied().collect(),
        ))
    }

    /// `‖Q − Q̂‖₂` for one row.
    pub fn residual(&self, q_values: &[f64]) -> Result<f64, FactorError> {
        let (_, fitted) = self.fit(q_values)?;
        Ok(q_values.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    }
}

/// Least-squares projection of one Q row onto `colspace(Ψ̃)`.
pub fn fit_factored_q(
    q_values: &[f64],
    space: &FactoredActionSpace,
) -> Result<(FactoredWeights, Vec<f64>), FactorError> {
    FactoredFitter::new(space).fit(q_values)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateResidual {
    pub state: usize,
    pub residual: f64,
    pub decomposable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub rows: Vec<StateResidual>,
    pub decomposable: bool,
    pub tol: f64,
}

impl DecompositionReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,residual,decomposable\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{}\n", r.state, r.residual, r.decomposable));
        }
        out
    }
}

/// Per-state `‖(I − ΨΨ⁺) Q(s,·)‖₂`; the table is decomposable iff every row is.
pub fn check_decomposability(
    q: &QTable,
    space: &FactoredActionSpace,
    tol: f64,
) -> Result<DecompositionReport, FactorError> {
    let fitter = FactoredFitter::new(space);
    let rows = (0..q.n_states())
        .map(|s| {
            let residual = fitter.residual(q.row(s))?;
            Ok(StateResidual { state: s, residual, decomposable: residual < tol })
        })
        .collect::<Result<Vec<_>, FactorError>>()?;
    let decomposable = rows.iter().all(|r| r.decomposable);
    Ok(DecompositionReport { rows, decomposable, tol })
}

/// `(|S|·∏|A_d|, |S|·(Σ|A_d| − D + 1))`.
pub fn free_parameter_count(space: &FactoredActionSpace, n_states: usize) -> (usize, usize) {
    (n_states * space.total(), n_states * condensed_width(space))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionFit {
    pub fitted: Vec<f64>,
    /// Condensed weights followed by one weight per interaction column.
    pub weights: Vec<f64>,
    pub residual: f64,
}

/// Least squares over `[Ψ̃ | interactions]`.
pub fn fit_with_interactions(
    q_values: &[f64],
    space: &FactoredActionSpace,
    interaction_columns: &[Vec<f64>],
) -> Result<InteractionFit, FactorError> {
    let n = space.total();
    if q_values.len() != n {
        return Err(FactorError::Shape(format!("Q row has {} entries, expected {n}", q_values.len())));
    }
    if let Some(c) = interaction_columns.iter().find(|c| c.len() != n) {
        return Err(FactorError::Shape(format!("interaction column has {} rows, expected {n}", c.len())));
    }
    let base = build_psi_tilde(space).entries;
    let mut design = DMatrix::zeros(n, base.ncols() + interaction_columns.len());
    design.columns_mut(0, base.ncols()).copy_from(&base);
    for (k, col) in interaction_columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            design[(i, base.ncols() + k)] = v;
        }
    }
    let weights = lstsq_min_norm(&design, q_values)?;
    let fitted: Vec<f64> = (0..n)
        .map(|i| design.row(i).iter().zip(&weights).map(|(x, w)| x * w).sum())
        .collect();
    let residual = q_values.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(InteractionFit { fitted, weights, residual })
}

// ── Bounds ──────────────────────────────────────────────────────────────

/// `A/(√2·m) · ‖X‖_F` for an `m × k` design.
pub fn rademacher_lower_bound(design: &DMatrix<f64>, weight_bound: f64) -> Result<f64, FactorError> {
    let m = design.nrows();
    if m == 0 || design.ncols() == 0 {
        return Err(FactorError::Argument("design matrix is empty".into()));
    }
    if !(weight_bound > 0.0) {
        return Err(FactorError::Argument(format!("weight bound must be positive, got {weight_bound}")));
    }
    Ok(weight_bound / (std::f64::consts::SQRT_2 * m as f64) * design.norm())
}

/// Rows `ψ(a)` for each sampled joint action.
pub fn factored_design(space: &FactoredActionSpace, samples: &[usize]) -> DMatrix<f64> {
    let psi = build_psi(space).entries;
    DMatrix::from_fn(samples.len(), psi.ncols(), |i, j| psi[(samples[i], j)])
}

/// `[ψ(a) | interaction indicators]` for each sampled joint action.
pub fn full_design(space: &FactoredActionSpace, samples: &[usize]) -> DMatrix<f64> {
    let base = factored_design(space, samples);
    let inter = interaction_columns(space);
    DMatrix::from_fn(samples.len(), base.ncols() + inter.len(), |i, j| {
        if j < base.ncols() { base[(i, j)] } else { inter[j - base.ncols()][samples[i]] }
    })
}

/// `(ε_r/(1−γ) + γ ε_p R/(2(1−γ)²), 2ε_r/(1−γ) + γ ε_p R/(1−γ)²)`.
pub fn simulation_lemma_bounds(
    eps_p: f64,
    eps_r: f64,
    gamma: f64,
    r_max: f64,
) -> Result<(f64, f64), FactorError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(FactorError::Argument(format!("discount must lie in [0, 1), got {gamma}")));
    }
    if eps_p < 0.0 || eps_r < 0.0 || r_max < 0.0 {
        return Err(FactorError::Argument("model errors and reward bound must be nonnegative".into()));
    }
    let h = 1.0 - gamma;
    let q = eps_r / h + gamma * eps_p * r_max / (2.0 * h * h);
    let v = 2.0 * eps_r / h + gamma * eps_p * r_max / (h * h);
    Ok((q, v))
}
