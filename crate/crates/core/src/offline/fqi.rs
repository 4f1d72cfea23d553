//! Fitted Q-iteration with linear features `x(s) ⊗ φ(a)`.
//!
//! `φ(a)` is `onehot(a)` (baseline, `|A|` columns) or the row `ψ̃(a)` of the
//! condensed matrix (factored, `1 + Σ_d (|A_d| − 1)` columns). The design is
//! fixed across iterations, so duplicate `(s, a)` pairs are aggregated and the
//! regularized Gram matrix is factored once.

use super::dataset::Dataset;
use super::OfflineError;
use crate::factorization::{condensed_width, pinv, psi_tilde_row};
use crate::mdp::{FactoredActionSpace, Policy, QTable};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionFeatures {
    Baseline,
    Factored,
}

impl ActionFeatures {
    pub fn label(self) -> &'static str {
        match self {
            ActionFeatures::Baseline => "baseline",
            ActionFeatures::Factored => "factored",
        }
    }

    pub fn width(self, space: &FactoredActionSpace) -> usize {
        match self {
            ActionFeatures::Baseline => space.total(),
            ActionFeatures::Factored => condensed_width(space),
        }
    }

    /// `φ(a)` for every joint action, row-major `|A| × width`.
    pub fn table(self, space: &FactoredActionSpace) -> Vec<Vec<f64>> {
        (0..space.total())
            .map(|a| match self {
                ActionFeatures::Baseline => {
                    let mut v = vec![0.0; space.total()];
                    v[a] = 1.0;
                    v
                }
                ActionFeatures::Factored => psi_tilde_row(space, a),
            })
            .collect()
    }
}

/// State features `x(s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum StateFeatures {
    /// `x(s) = e_s`; solved as independent per-state blocks.
    Tabular { n_states: usize },
    /// One row per state.
    Matrix(Vec<Vec<f64>>),
}

impl StateFeatures {
    pub fn n_states(&self) -> usize {
        match self {
            StateFeatures::Tabular { n_states } => *n_states,
            StateFeatures::Matrix(m) => m.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiConfig {
    pub mode: ActionFeatures,
    pub iterations: usize,
    /// Ridge penalty; `0` selects the minimum-norm solution.
    pub ridge: f64,
    pub clip: (f64, f64),
    pub gamma: f64,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self { mode: ActionFeatures::Factored, iterations: 50, ridge: 1e-3, clip: (-1.0, 1.0), gamma: 0.99 }
    }
}

impl FqiConfig {
    pub fn validate(&self) -> Result<(), OfflineError> {
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(OfflineError::Argument(format!("ridge must be finite and nonnegative, got {}", self.ridge)));
        }
        let (lo, hi) = self.clip;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(OfflineError::Argument(format!("clip range ({lo}, {hi}) is invalid")));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(OfflineError::Argument(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.iterations == 0 {
            return Err(OfflineError::Argument("need at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FqiIteration {
    /// `Θ` flattened row-major as `state_feature × action_feature`; tabular
    /// mode stores one block per state.
    pub weights: Vec<f64>,
    pub q: QTable,
    pub policy: Policy,
}

#[derive(Debug, Clone)]
pub struct FqiResult {
    pub iterations: Vec<FqiIteration>,
}

impl FqiResult {
    pub fn last(&self) -> &FqiIteration {
        self.iterations.last().expect("at least one iteration")
    }
}

// ── Solvers ─────────────────────────────────────────────────────────────

enum Solver {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Pinv(DMatrix<f64>),
}

impl Solver {
    fn new(gram: DMatrix<f64>, ridge: f64) -> Self {
        let n = gram.nrows();
        if ridge > 0.0 {
            let m = gram + DMatrix::identity(n, n) * ridge;
            if let Some(c) = m.clone().cholesky() {
                return Solver::Cholesky(c);
            }
            return Solver::Pinv(pinv(&m));
        }
        Solver::Pinv(pinv(&gram))
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Solver::Cholesky(c) => c.solve(b),
            Solver::Pinv(p) => p * b,
        }
    }
}

/// One aggregated design row.
struct Cell {
    s: usize,
    a: usize,
    count: f64,
}

/// Runs `config.iterations` rounds from `Q̂_0 = 0`. Round `k` regresses
/// `clip(r + γ max_a' Q̂_{k−1}(s', a'))` (just `clip(r)` on done records).
pub fn fqi(
    dataset: &Dataset,
    space: &FactoredActionSpace,
    features: &StateFeatures,
    config: &FqiConfig,
) -> Result<FqiResult, OfflineError> {
    config.validate()?;
    if dataset.records.is_empty() {
        return Err(OfflineError::Argument("dataset is empty".into()));
    }
    let n_states = features.n_states();
    let na = space.total();
    if let StateFeatures::Matrix(m) = features {
        let k = m.first().map_or(0, Vec::len);
        if k == 0 || m.iter().any(|r| r.len() != k) {
            return Err(OfflineError::Argument("state feature rows must share a positive width".into()));
        }
    }
    for r in &dataset.records {
        if r.s >= n_states || r.s_next >= n_states || r.a >= na {
            return Err(OfflineError::Dataset(format!(
                "record {r:?} is outside {n_states} states x {na} actions"
            )));
        }
    }

    let phi = config.mode.table(space);
    let m = config.mode.width(space);

    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut cells: Vec<Cell> = Vec::new();
    let record_cell: Vec<usize> = dataset
        .records
        .iter()
        .map(|r| {
            let id = *index.entry((r.s, r.a)).or_insert_with(|| {
                cells.push(Cell { s: r.s, a: r.a, count: 0.0 });
                cells.len() - 1
            });
            cells[id].count += 1.0;
            id
        })
        .collect();

    let model = Model::build(features, &phi, m, &cells, config.ridge);
    let mut q = vec![0.0; n_states * na];
    let mut iterations = Vec::with_capacity(config.iterations);
    let (lo, hi) = config.clip;
    for _ in 0..config.iterations {
        let mut sums = vec![0.0; cells.len()];
        for (r, &c) in dataset.records.iter().zip(&record_cell) {
            let boot = if r.done {
                0.0
            } else {
                let row = &q[r.s_next * na..(r.s_next + 1) * na];
                row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            sums[c] += (r.r + config.gamma * boot).clamp(lo, hi);
        }
        let weights = model.solve(&phi, m, &cells, &sums);
        q = model.q_values(features, &phi, m, &weights, na);
        let table = QTable::new(n_states, na, q.clone(), config.gamma)?;
        let policy = table.greedy();
        iterations.push(FqiIteration { weights, q: table, policy });
    }
    Ok(FqiResult { iterations })
}

/// Prefactored normal equations.
enum Model {
    /// One `m × m` system per state with data; states without data keep zero weights.
    Tabular { n_states: usize, blocks: HashMap<usize, Solver> },
    Linear { x: Vec<Vec<f64>>, solver: Solver },
}

impl Model {
    fn build(features: &StateFeatures, phi: &[Vec<f64>], m: usize, cells: &[Cell], ridge: f64) -> Self {
        match features {
            StateFeatures::Tabular { n_states } => {
                let mut grams: HashMap<usize, DMatrix<f64>> = HashMap::new();
                for c in cells {
                    let g = grams.entry(c.s).or_insert_with(|| DMatrix::zeros(m, m));
                    let f = &phi[c.a];
                    for i in 0..m {
                        for j in 0..m {
                            g[(i, j)] += c.count * f[i] * f[j];
                        }
                    }
                }
                let blocks = grams.into_iter().map(|(s, g)| (s, Solver::new(g, ridge))).collect();
                Model::Tabular { n_states: *n_states, blocks }
            }
            StateFeatures::Matrix(x) => {
                let k = x[0].len();
                let dim = k * m;
                let mut g = DMatrix::zeros(dim, dim);
                let mut f = vec![0.0; dim];
                for c in cells {
                    kron(&x[c.s], &phi[c.a], &mut f);
                    let nz: Vec<usize> = (0..dim).filter(|&i| f[i] != 0.0).collect();
                    for &i in &nz {
                        for &j in &nz {
                            g[(i, j)] += c.count * f[i] * f[j];
                        }
                    }
                }
                Model::Linear { x: x.clone(), solver: Solver::new(g, ridge) }
            }
        }
    }

    fn solve(&self, phi: &[Vec<f64>], m: usize, cells: &[Cell], sums: &[f64]) -> Vec<f64> {
        match self {
            Model::Tabular { n_states, blocks } => {
                let mut rhs: HashMap<usize, DVector<f64>> = HashMap::new();
                for (c, &y) in cells.iter().zip(sums) {
                    let b = rhs.entry(c.s).or_insert_with(|| DVector::zeros(m));
                    for (i, &f) in phi[c.a].iter().enumerate() {
                        b[i] += y * f;
                    }
                }
                let mut w = vec![0.0; n_states * m];
                for (s, b) in rhs {
                    let sol = blocks[&s].solve(&b);
                    w[s * m..(s + 1) * m].copy_from_slice(sol.as_slice());
                }
                w
            }
            Model::Linear { x, solver } => {
                let dim = x[0].len() * m;
                let mut b = DVector::zeros(dim);
                let mut f = vec![0.0; dim];
                for (c, &y) in cells.iter().zip(sums) {
                    kron(&x[c.s], &phi[c.a], &mut f);
                    for (i, &v) in f.iter().enumerate() {
                        if v != 0.0 {
                            b[i] += y * v;
                        }
                    }
                }
                solver.solve(&b).as_slice().to_vec()
            }
        }
    }

    fn q_values(&self, features: &StateFeatures, phi: &[Vec<f64>], m: usize, w: &[f64], na: usize) -> Vec<f64> {
        let n = features.n_states();
        let mut q = vec![0.0; n * na];
        match features {
            StateFeatures::Tabular { .. } => {
                for s in 0..n {
                    let ws = &w[s * m..(s + 1) * m];
                    for a in 0..na {
                        q[s * na + a] = phi[a].iter().zip(ws).map(|(f, w)| f * w).sum();
                    }
                }
            }
            StateFeatures::Matrix(x) => {
                let k = x[0].len();
                for s in 0..n {
                    // u = x(s)ᵀ Θ, a length-m row.
                    let mut u = vec![0.0; m];
                    for (i, &xi) in x[s].iter().enumerate() {
                        if xi != 0.0 {
                            for j in 0..m {
                                u[j] += xi * w[i * m + j];
                            }
                        }
                    }
                    for a in 0..na {
                        q[s * na + a] = phi[a].iter().zip(&u).map(|(f, u)| f * u).sum();
                    }
                }
                debug_assert_eq!(w.len(), k * m);
            }
        }
        q
    }
}

fn kron(x: &[f64], f: &[f64], out: &mut [f64]) {
    let m = f.len();
    for (i, &xi) in x.iter().enumerate() {
        for (j, &fj) in f.iter().enumerate() {
            out[i * m + j] = xi * fj;
        }
    }
}
