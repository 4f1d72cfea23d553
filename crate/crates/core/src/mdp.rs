//! Finite MDPs over factored action spaces and exact dynamic programming.
//!
//! Joint actions and joint states use row-major mixed-radix indexing with
//! dimension 0 most significant. Transitions are stored as sparse rows keyed
//! by `s * n_actions + a`; every row is sorted by next state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row-sum and initial-distribution tolerance.
pub const PROB_TOL: f64 = 1e-12;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("sub-action {value} out of range for dimension {dim} (cardinality {cardinality})")]
    Bounds { dim: usize, value: usize, cardinality: usize },
    #[error("invalid action space: {0}")]
    InvalidSpace(String),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("exact evaluation did not converge: {0}")]
    NonConvergent(String),
    #[error("unsupported discount {0}")]
    UnsupportedDiscount(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("composition error: {0}")]
    Composition(String),
}

// ── Action space ────────────────────────────────────────────────────────

/// Cartesian product `A_1 × … × A_D` with a fixed index bijection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FactoredActionSpace {
    cardinalities: Vec<usize>,
    total: usize,
}

impl FactoredActionSpace {
    pub fn new(cardinalities: Vec<usize>) -> Result<Self, MdpError> {
        if cardinalities.is_empty() {
            return Err(MdpError::InvalidSpace("at least one dimension required".into()));
        }
        if let Some(d) = cardinalities.iter().position(|&c| c < 2) {
            return Err(MdpError::InvalidSpace(format!(
                "dimension {d} has cardinality {}; every dimension needs at least 2 sub-actions",
                cardinalities[d]
            )));
        }
        let total = cardinalities
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| MdpError::InvalidSpace("joint action count overflows".into()))?;
        Ok(Self { cardinalities, total })
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn dims(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Row-major joint index of a sub-action vector.
    pub fn index(&self, subactions: &[usize]) -> Result<usize, MdpError> {
        action_index(subactions, self)
    }

    /// Inverse of [`index`](Self::index).
    pub fn decompose(&self, index: usize) -> Vec<usize> {
        decompose_action(index, self)
    }
}

impl TryFrom<Vec<usize>> for FactoredActionSpace {
    type Error = MdpError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<FactoredActionSpace> for Vec<usize> {
    fn from(s: FactoredActionSpace) -> Self {
        s.cardinalities
    }
}

/// `Σ_d a_d · ∏_{d' > d} |A_{d'}|`.
pub fn action_index(subactions: &[usize], space: &FactoredActionSpace) -> Result<usize, MdpError> {
    mixed_radix_index(subactions, &space.cardinalities)
}

pub fn decompose_action(index: usize, space: &FactoredActionSpace) -> Vec<usize> {
    mixed_radix_digits(index, &space.cardinalities)
}

pub(crate) fn mixed_radix_index(digits: &[usize], radices: &[usize]) -> Result<usize, MdpError> {
    if digits.len() != radices.len() {
        return Err(MdpError::Shape(format!(
            "expected {} coordinates, got {}",
            radices.len(),
            digits.len()
        )));
    }
    let mut idx = 0usize;
    for (d, (&v, &c)) in digits.iter().zip(radices).enumerate() {
        if v >= c {
            return Err(MdpError::Bounds { dim: d, value: v, cardinality: c });
        }
        idx = idx * c + v;
    }
    Ok(idx)
}

pub(crate) fn mixed_radix_digits(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for d in (0..radices.len()).rev() {
        out[d] = index % radices[d];
        index /= radices[d];
    }
    out
}

// ── MDP ─────────────────────────────────────────────────────────────────

/// Sparse transition row: `(next_state, probability)` pairs sorted by state.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    actions: FactoredActionSpace,
    transitions: Vec<SparseRow>,
    reward: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
}

impl TabularMdp {
    /// Build from a dense `(s, a, s')` tensor and an `(s, a)` reward table.
    pub fn new(
        actions: FactoredActionSpace,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let n_states = transition.len();
        let n_actions = actions.total();
        if reward.len() != n_states {
            return Err(MdpError::Shape(format!(
                "reward has {} rows for {n_states} states",
                reward.len()
            )));
        }
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(MdpError::Shape(format!(
                    "state {s} has {} transition rows, expected {n_actions}",
                    per_action.len()
                )));
            }
            for (a, dense) in per_action.iter().enumerate() {
                if dense.len() != n_states {
                    return Err(MdpError::Shape(format!(
                        "transition row ({s},{a}) has length {}, expected {n_states}",
                        dense.len()
                    )));
                }
                rows.push(
                    dense
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p != 0.0)
                        .map(|(j, &p)| (j, p))
                        .collect(),
                );
            }
        }
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(MdpError::Shape(format!(
                    "reward row {s} has length {}, expected {n_actions}",
                    row.len()
                )));
            }
            flat_r.extend_from_slice(row);
        }
        Self::from_sparse(n_states, actions, rows, flat_r, gamma, initial_dist)
    }

    /// Build from sparse rows indexed `s * n_actions + a` and a flat reward table.
    pub fn from_sparse(
        n_states: usize,
        actions: FactoredActionSpace,
        mut transitions: Vec<SparseRow>,
        reward: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let n_actions = actions.total();
        if n_states == 0 {
            return Err(MdpError::Shape("an MDP needs at least one state".into()));
        }
        if transitions.len() != n_states * n_actions {
            return Err(MdpError::Shape(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                transitions.len()
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::Shape(format!(
                "expected {} reward entries, got {}",
                n_states * n_actions,
                reward.len()
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(MdpError::UnsupportedDiscount(gamma));
        }
        for (k, row) in transitions.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let (s, a) = (k / n_actions, k % n_actions);
            let mut sum = 0.0;
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(MdpError::InvalidDistribution(format!(
                        "row ({s},{a}) lists next state {} twice",
                        w[0].0
                    )));
                }
            }
            for &(j, p) in row.iter() {
                if j >= n_states {
                    return Err(MdpError::Shape(format!("row ({s},{a}) targets state {j}")));
                }
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(MdpError::InvalidDistribution(format!(
                        "row ({s},{a}) has entry {p} for next state {j}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(MdpError::InvalidDistribution(format!(
                    "row ({s},{a}) sums to {sum}"
                )));
            }
        }
        if let Some(k) = reward.iter().position(|r| !r.is_finite()) {
            return Err(MdpError::NonFinite(format!(
                "reward ({},{})",
                k / n_actions,
                k % n_actions
            )));
        }
        check_distribution(&initial_dist, n_states, "initial distribution")?;
        Ok(Self { n_states, actions, transitions, reward, gamma, initial_dist })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.actions.total()
    }

    pub fn actions(&self) -> &FactoredActionSpace {
        &self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions() + a]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        let row = self.row(s, a);
        row.binary_search_by_key(&next, |&(j, _)| j)
            .map(|i| row[i].1)
            .unwrap_or(0.0)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    /// Flat `(s, a)` reward table.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, MdpError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(MdpError::UnsupportedDiscount(gamma));
        }
        Ok(Self { gamma, ..self.clone() })
    }

    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> Result<Self, MdpError> {
        check_distribution(&initial_dist, self.n_states, "initial distribution")?;
        Ok(Self { initial_dist, ..self.clone() })
    }

    /// `P V` for every `(s, a)`, flat.
    pub fn expected_next(&self, v: &[f64]) -> Vec<f64> {
        self.transitions
            .iter()
            .map(|row| row.iter().map(|&(j, p)| p * v[j]).sum())
            .collect()
    }

    /// Dense copy of the transition tensor.
    pub fn dense_transition(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions())
                    .map(|a| {
                        let mut d = vec![0.0; self.n_states];
                        for &(j, p) in self.row(s, a) {
                            d[j] = p;
                        }
                        d
                    })
                    .collect()
            })
            .collect()
    }

    pub fn reward_table(&self) -> Vec<Vec<f64>> {
        self.reward.chunks(self.n_actions()).map(|c| c.to_vec()).collect()
    }

    /// Dense document; every `(s, a, s')` entry is written.
    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states,
            cardinalities: self.actions.cardinalities().to_vec(),
            gamma: self.gamma,
            initial_dist: self.initial_dist.clone(),
            transition: Some(self.dense_transition()),
            transition_sparse: None,
            reward: self.reward_table(),
        }
    }

    /// Sparse document listing only the nonzero `(s', p)` pairs of each row.
    pub fn to_sparse_document(&self) -> MdpDocument {
        let na = self.n_actions();
        MdpDocument {
            n_states: self.n_states,
            cardinalities: self.actions.cardinalities().to_vec(),
            gamma: self.gamma,
            initial_dist: self.initial_dist.clone(),
            transition: None,
            transition_sparse: Some(self.transitions.chunks(na).map(<[SparseRow]>::to_vec).collect()),
            reward: self.reward_table(),
        }
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self, MdpError> {
        let space = FactoredActionSpace::new(doc.cardinalities)?;
        match (doc.transition, doc.transition_sparse) {
            (Some(dense), None) => {
                if dense.len() != doc.n_states {
                    return Err(MdpError::Shape(format!(
                        "n_states is {} but transition has {} rows",
                        doc.n_states,
                        dense.len()
                    )));
                }
                Self::new(space, dense, doc.reward, doc.gamma, doc.initial_dist)
            }
            (None, Some(sparse)) => {
                let na = space.total();
                if sparse.len() != doc.n_states || sparse.iter().any(|r| r.len() != na) {
                    return Err(MdpError::Shape(format!(
                        "transition_sparse must be {} states x {na} actions",
                        doc.n_states
                    )));
                }
                if doc.reward.len() != doc.n_states || doc.reward.iter().any(|r| r.len() != na) {
                    return Err(MdpError::Shape(format!("reward must be {} states x {na} actions", doc.n_states)));
                }
                let rows = sparse.into_iter().flatten().collect();
                let reward = doc.reward.into_iter().flatten().collect();
                Self::from_sparse(doc.n_states, space, rows, reward, doc.gamma, doc.initial_dist)
            }
            _ => Err(MdpError::Shape("exactly one of transition and transition_sparse must be given".into())),
        }
    }
}

/// Serialized form of a [`TabularMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub cardinalities: Vec<usize>,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    /// Dense `[s][a][s']` tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<Vec<f64>>>>,
    /// `[s][a]` lists of `[s', p]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_sparse: Option<Vec<Vec<SparseRow>>>,
    pub reward: Vec<Vec<f64>>,
}

/// Serialized form of a [`Policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    /// `probabilities[s][a] = π(a|s)`.
    pub probabilities: Vec<Vec<f64>>,
}

fn check_distribution(p: &[f64], n: usize, what: &str) -> Result<(), MdpError> {
    if p.len() != n {
        return Err(MdpError::Shape(format!("{what} has length {}, expected {n}", p.len())));
    }
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0 && **x <= 1.0)) {
        return Err(MdpError::InvalidDistribution(format!("{what} has entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(MdpError::InvalidDistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

// ── Policies and Q tables ───────────────────────────────────────────────

/// Stochastic policy `π(a|s)`, flat over `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    deterministic: bool,
}

impl Policy {
    pub fn from_table(table: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let n_states = table.len();
        let n_actions = table.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Shape("empty policy table".into()));
        }
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, row) in table.iter().enumerate() {
            if row.len() != n_actions {
                return Err(MdpError::Shape(format!("policy row {s} has length {}", row.len())));
            }
            check_distribution(row, n_actions, &format!("policy row {s}"))?;
            probs.extend_from_slice(row);
        }
        let deterministic = probs.chunks(n_actions).all(|r| r.iter().all(|&p| p == 0.0 || p == 1.0));
        Ok(Self { n_states, n_actions, probs, deterministic })
    }

    /// One-hot policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self, MdpError> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(MdpError::Argument(format!("state {s} selects action {a} of {n_actions}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        if actions.is_empty() {
            return Err(MdpError::Shape("empty policy".into()));
        }
        Ok(Self { n_states: actions.len(), n_actions, probs, deterministic: true })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
            deterministic: n_actions == 1,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Action chosen in `s` if the row is one-hot.
    pub fn action(&self, s: usize) -> Option<usize> {
        let row = self.row(s);
        let a = row.iter().position(|&p| p == 1.0)?;
        row.iter().enumerate().all(|(b, &p)| b == a || p == 0.0).then_some(a)
    }

    pub fn table(&self) -> Vec<Vec<f64>> {
        self.probs.chunks(self.n_actions).map(|c| c.to_vec()).collect()
    }

    pub fn to_document(&self) -> PolicyDocument {
        PolicyDocument { probabilities: self.table() }
    }

    pub fn from_document(doc: PolicyDocument) -> Result<Self, MdpError> {
        Self::from_table(doc.probabilities)
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(MdpError::Shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Action values `Q(s, a)`, flat over `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    gamma: f64,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>, gamma: f64) -> Result<Self, MdpError> {
        if values.len() != n_states * n_actions {
            return Err(MdpError::Shape(format!(
                "Q table has {} entries, expected {}",
                values.len(),
                n_states * n_actions
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MdpError::NonFinite("Q table".into()));
        }
        Ok(Self { n_states, n_actions, values, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `V(s) = Σ_a π(a|s) Q(s, a)`.
    pub fn state_values(&self, pi: &Policy) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| self.row(s).iter().zip(pi.row(s)).map(|(q, p)| q * p).sum())
            .collect()
    }

    /// Greedy policy with ties broken toward the lowest action index.
    pub fn greedy(&self) -> Policy {
        let acts: Vec<usize> = (0..self.n_states).map(|s| argmax_lowest(self.row(s))).collect();
        Policy::deterministic(&acts, self.n_actions).expect("greedy actions are in range")
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Index of the first maximal entry.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

// ── Dynamic programming ─────────────────────────────────────────────────

fn bellman_backup(mdp: &TabularMdp, v: &[f64], gamma: f64) -> Vec<f64> {
    let pv = mdp.expected_next(v);
    mdp.reward.iter().zip(pv).map(|(r, x)| r + gamma * x).collect()
}

fn policy_reward_and_matrix(mdp: &TabularMdp, pi: &Policy) -> (DVector<f64>, DMatrix<f64>) {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut r = DVector::zeros(n);
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..na {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, a);
            for &(j, q) in mdp.row(s, a) {
                p[(s, j)] += w * q;
            }
        }
    }
    (r, p)
}

/// Bellman residual `‖Q − (R + γ P^π Q)‖_∞`.
pub fn bellman_residual(mdp: &TabularMdp, pi: &Policy, q: &QTable) -> f64 {
    let v = q.state_values(pi);
    let backup = bellman_backup(mdp, &v, mdp.gamma());
    q.values.iter().zip(backup).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Solves `(I − γ P^π) V = r^π` by dense LU with iterative refinement, then
/// returns `Q = R + γ P V`.
pub fn policy_evaluation_exact(mdp: &TabularMdp, pi: &Policy) -> Result<QTable, MdpError> {
    pi.check_against(mdp)?;
    let gamma = mdp.gamma();
    let n = mdp.n_states();
    let (r, p) = policy_reward_and_matrix(mdp, pi);
    let m = DMatrix::identity(n, n) - p * gamma;
    let lu = m.clone().lu();
    let mut v = lu.solve(&r).ok_or_else(|| {
        MdpError::NonConvergent(format!("I - γP^π is singular at γ = {gamma}"))
    })?;
    let scale = r.amax().max(1.0);
    let mut converged = false;
    for _ in 0..8 {
        let resid = &r - &m * &v;
        if !v.iter().all(|x| x.is_finite()) {
            break;
        }
        if resid.amax() <= 1e-13 * scale {
            converged = true;
            break;
        }
        match lu.solve(&resid) {
            Some(dv) => v += dv,
            None => break,
        }
    }
    if !converged {
        let resid = (&r - &m * &v).amax();
        if !(resid <= 1e-10 * scale) {
            return Err(MdpError::NonConvergent(format!(
                "residual {resid:e} after refinement at γ = {gamma}"
            )));
        }
    }
    let values = bellman_backup(mdp, v.as_slice(), gamma);
    QTable::new(n, mdp.n_actions(), values, gamma)
}

/// `Q^{(1)} = R`, `Q^{(k+1)} = R + γ P V^{(k)}` with `V^{(k)} = Σ_a π Q^{(k)}`.
pub fn h_step_q(mdp: &TabularMdp, pi: &Policy, h: usize) -> Result<QTable, MdpError> {
    pi.check_against(mdp)?;
    if h == 0 {
        return Err(MdpError::Argument("horizon must be at least 1".into()));
    }
    let gamma = mdp.gamma();
    let mut q = QTable::new(mdp.n_states(), mdp.n_actions(), mdp.reward.clone(), gamma)?;
    for _ in 1..h {
        let v = q.state_values(pi);
        q.values = bellman_backup(mdp, &v, gamma);
    }
    Ok(q)
}

/// Optimal Q within `tol` (sup norm) and its lowest-index greedy policy.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(QTable, Policy), MdpError> {
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return Err(MdpError::UnsupportedDiscount(gamma));
    }
    if !(tol > 0.0) {
        return Err(MdpError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let mut q = mdp.reward.clone();
    loop {
        let v: Vec<f64> = q.chunks(na).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let next = bellman_backup(mdp, &v, gamma);
        let delta = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        // ‖Q_k − Q*‖ ≤ γ/(1−γ) ‖Q_k − Q_{k−1}‖
        if gamma == 0.0 || gamma * delta <= tol * (1.0 - gamma) {
            break;
        }
    }
    let q = QTable::new(n, na, q, gamma)?;
    let pi = q.greedy();
    Ok((q, pi))
}

/// `Σ_s μ0(s) V^π(s)`.
pub fn policy_value(mdp: &TabularMdp, pi: &Policy) -> Result<f64, MdpError> {
    let q = policy_evaluation_exact(mdp, pi)?;
    Ok(start_value(mdp, pi, &q))
}

/// `Σ_s μ0(s) Σ_a π(a|s) Q(s, a)` for a supplied Q.
pub fn start_value(mdp: &TabularMdp, pi: &Policy, q: &QTable) -> f64 {
    q.state_values(pi).iter().zip(mdp.initial_dist()).map(|(v, m)| v * m).sum()
}

/// `Σ_s μ0(s) V^π(s)` by sparse successive approximation, stopping once
/// `γ‖V_k − V_{k−1}‖_∞ ≤ tol·(1 − γ)`. Requires `γ < 1`.
pub fn policy_value_iterative(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Result<f64, MdpError> {
    pi.check_against(mdp)?;
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return Err(MdpError::UnsupportedDiscount(gamma));
    }
    if !(tol > 0.0) {
        return Err(MdpError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let support: Vec<Vec<(usize, f64)>> =
        (0..n).map(|s| (0..na).map(|a| (a, pi.prob(s, a))).filter(|&(_, w)| w > 0.0).collect()).collect();
    let r: Vec<f64> = (0..n).map(|s| support[s].iter().map(|&(a, w)| w * mdp.reward(s, a)).sum()).collect();
    let mut v = r.clone();
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                let ev: f64 = support[s]
                    .iter()
                    .map(|&(a, w)| w * mdp.row(s, a).iter().map(|&(j, p)| p * v[j]).sum::<f64>())
                    .sum();
                r[s] + gamma * ev
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if gamma == 0.0 || gamma * delta <= tol * (1.0 - gamma) {
            break;
        }
    }
    Ok(v.iter().zip(mdp.initial_dist()).map(|(x, m)| x * m).sum())
}

/// Expected `h`-step return from the initial distribution.
pub fn finite_horizon_value(mdp: &TabularMdp, pi: &Policy, h: usize) -> Result<f64, MdpError> {
    let q = h_step_q(mdp, pi, h)?;
    Ok(start_value(mdp, pi, &q))
}

// ── Composition ─────────────────────────────────────────────────────────

/// Fully factored product `⊗_d M_d`: rewards add, transitions multiply.
pub fn compose_parallel(mdps: &[TabularMdp]) -> Result<TabularMdp, MdpError> {
    let first = mdps
        .first()
        .ok_or_else(|| MdpError::Composition("no component MDPs".into()))?;
    let gamma = first.gamma();
    if let Some(m) = mdps.iter().find(|m| m.gamma() != gamma) {
        return Err(MdpError::Composition(format!(
            "discounts differ: {gamma} vs {}",
            m.gamma()
        )));
    }
    let state_radices: Vec<usize> = mdps.iter().map(TabularMdp::n_states).collect();
    let mut cards = Vec::new();
    let mut action_radices = Vec::new();
    for m in mdps {
        cards.extend_from_slice(m.actions().cardinalities());
        action_radices.push(m.n_actions());
    }
    let space = FactoredActionSpace::new(cards)?;
    let n_states: usize = state_radices.iter().product();
    let n_actions = space.total();
    let mut rows = Vec::with_capacity(n_states * n_actions);
    let mut reward = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        let ss = mixed_radix_digits(s, &state_radices);
        for a in 0..n_actions {
            let aa = mixed_radix_digits(a, &action_radices);
            let mut row: SparseRow = vec![(0, 1.0)];
            let mut r = 0.0;
            for (d, m) in mdps.iter().enumerate() {
                r += m.reward(ss[d], aa[d]);
                let comp = m.row(ss[d], aa[d]);
                let mut next = Vec::with_capacity(row.len() * comp.len());
                for &(j, p) in &row {
                    for &(k, q) in comp {
                        next.push((j * state_radices[d] + k, p * q));
                    }
                }
                row = next;
            }
            rows.push(row);
            reward.push(r);
        }
    }
    let initial: Vec<f64> = (0..n_states)
        .map(|s| {
            let ss = mixed_radix_digits(s, &state_radices);
            mdps.iter().zip(&ss).map(|(m, &k)| m.initial_dist()[k]).product()
        })
        .collect();
    let total: f64 = initial.iter().sum();
    let initial = initial.into_iter().map(|x| x / total).collect();
    TabularMdp::from_sparse(n_states, space, rows, reward, gamma, initial)
}

/// `π(a|s) = ∏_d π_d(a_d|s_d)` on the index spaces of [`compose_parallel`].
pub fn compose_factored_policy(policies: &[Policy], mdps: &[TabularMdp]) -> Result<Policy, MdpError> {
    if policies.len() != mdps.len() || policies.is_empty() {
        return Err(MdpError::Composition(format!(
            "{} policies for {} component MDPs",
            policies.len(),
            mdps.len()
        )));
    }
    for (d, (p, m)) in policies.iter().zip(mdps).enumerate() {
        if p.n_states() != m.n_states() || p.n_actions() != m.n_actions() {
            return Err(MdpError::Composition(format!("policy {d} does not match component {d}")));
        }
    }
    let state_radices: Vec<usize> = mdps.iter().map(TabularMdp::n_states).collect();
    let action_radices: Vec<usize> = mdps.iter().map(TabularMdp::n_actions).collect();
    let n_states: usize = state_radices.iter().product();
    let n_actions: usize = action_radices.iter().product();
    let table = (0..n_states)
        .map(|s| {
            let ss = mixed_radix_digits(s, &state_radices);
            (0..n_actions)
                .map(|a| {
                    let aa = mixed_radix_digits(a, &action_radices);
                    policies
                        .iter()
                        .enumerate()
                        .map(|(d, p)| p.prob(ss[d], aa[d]))
                        .product()
                })
                .collect()
        })
        .collect();
    let mut pi = Policy::from_table(table)?;
    pi.deterministic = policies.iter().all(Policy::is_deterministic);
    Ok(pi)
}
