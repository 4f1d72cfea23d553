//! Discrete sepsis physiology simulator with a three-bit treatment action.
//!
//! A step applies each treatment stage in `treatment_order`, then the
//! fluctuation stage to every vital no stage suppressed, then sets the
//! treatment flags to the action bits and evaluates the terminal rules on the
//! result. Every stage acts on each vital through an independent per-level
//! stochastic matrix, so the next-state law is a product over vitals.
//!
//! State index (row-major, first field most significant):
//! heart rate (3), blood pressure (3), oxygen (2), glucose (5), diabetic (2),
//! antibiotics (2), vasopressors (2), ventilation (2). Indices 1440 and 1441
//! are the absorbing death and discharge states.
//!
//! Joint action `4·antibiotics + 2·vasopressors + ventilation`, i.e. action
//! dimensions `[antibiotics, vasopressors, ventilation]`.

use crate::mdp::{
    finite_horizon_value, mixed_radix_digits, mixed_radix_index, policy_value_iterative, value_iteration, FactoredActionSpace, MdpError,
    Policy, QTable, SparseRow, TabularMdp, PROB_TOL,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const N_CONFIG_STATES: usize = 1440;
pub const DEATH: usize = 1440;
pub const DISCHARGE: usize = 1441;
pub const N_STATES: usize = 1442;
pub const N_ACTIONS: usize = 8;
pub const N_FEATURES: usize = 21;
pub const FEATURE_GROUPS: usize = 8;

const RADICES: [usize; 8] = [3, 3, 2, 5, 2, 2, 2, 2];
const LEVELS: [usize; 4] = [3, 3, 2, 5];

#[derive(Debug, Error)]
pub enum SepsisError {
    #[error("invalid sepsis configuration: {0}")]
    Config(String),
    #[error("could not read configuration {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("could not parse configuration {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

// ── State ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vital {
    HeartRate,
    BloodPressure,
    Oxygen,
    Glucose,
}

impl Vital {
    pub const ALL: [Vital; 4] = [Vital::HeartRate, Vital::BloodPressure, Vital::Oxygen, Vital::Glucose];

    pub fn levels(self) -> usize {
        LEVELS[self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SepsisState {
    /// `[heart_rate, blood_pressure, oxygen, glucose]` levels.
    pub vitals: [usize; 4],
    pub diabetic: bool,
    /// `[antibiotics, vasopressors, ventilation]`.
    pub treatments: [bool; 3],
}

impl SepsisState {
    pub fn index(&self) -> usize {
        let d = [
            self.vitals[0],
            self.vitals[1],
            self.vitals[2],
            self.vitals[3],
            self.diabetic as usize,
            self.treatments[0] as usize,
            self.treatments[1] as usize,
            self.treatments[2] as usize,
        ];
        mixed_radix_index(&d, &RADICES).expect("state fields in range")
    }

    /// `None` for the two absorbing indices and anything beyond.
    pub fn from_index(index: usize) -> Option<Self> {
        if index >= N_CONFIG_STATES {
            return None;
        }
        let d = mixed_radix_digits(index, &RADICES);
        Some(Self {
            vitals: [d[0], d[1], d[2], d[3]],
            diabetic: d[4] == 1,
            treatments: [d[5] == 1, d[6] == 1, d[7] == 1],
        })
    }

    pub fn all() -> impl Iterator<Item = SepsisState> {
        (0..N_CONFIG_STATES).map(|i| Self::from_index(i).expect("in range"))
    }
}

/// `[antibiotics, vasopressors, ventilation]` bits of a joint action.
pub fn action_bits(action: usize) -> [bool; 3] {
    [action & 4 != 0, action & 2 != 0, action & 1 != 0]
}

pub fn action_space() -> FactoredActionSpace {
    FactoredActionSpace::new(vec![2, 2, 2]).expect("valid space")
}

/// One-hot blocks: hr(3), bp(3), o2(2), glucose(5), diabetic(2),
/// antibiotics(2), vasopressors(2), ventilation(2). Exactly eight ones.
pub fn featurize(state: &SepsisState) -> [f64; N_FEATURES] {
    let mut x = [0.0; N_FEATURES];
    let values = [
        state.vitals[0],
        state.vitals[1],
        state.vitals[2],
        state.vitals[3],
        state.diabetic as usize,
        state.treatments[0] as usize,
        state.treatments[1] as usize,
        state.treatments[2] as usize,
    ];
    let mut off = 0;
    for (v, r) in values.iter().zip(RADICES) {
        x[off + v] = 1.0;
        off += r;
    }
    x
}

/// Feature rows for every index of the enumerated MDP; absorbing rows are zero.
pub fn feature_matrix() -> Vec<Vec<f64>> {
    (0..N_STATES)
        .map(|i| match SepsisState::from_index(i) {
            Some(s) => featurize(&s).to_vec(),
            None => vec![0.0; N_FEATURES],
        })
        .collect()
}

// ── Configuration ───────────────────────────────────────────────────────

/// Per-level stochastic matrix `m[level][next_level]`, one per diabetic status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditional {
    pub non_diabetic: Vec<Vec<f64>>,
    pub diabetic: Vec<Vec<f64>>,
}

impl Conditional {
    pub fn get(&self, diabetic: bool) -> &[Vec<f64>] {
        if diabetic { &self.diabetic } else { &self.non_diabetic }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VitalTables {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heart_rate: Option<Conditional>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blood_pressure: Option<Conditional>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oxygen: Option<Conditional>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glucose: Option<Conditional>,
}

impl VitalTables {
    pub fn get(&self, v: Vital) -> Option<&Conditional> {
        match v {
            Vital::HeartRate => self.heart_rate.as_ref(),
            Vital::BloodPressure => self.blood_pressure.as_ref(),
            Vital::Oxygen => self.oxygen.as_ref(),
            Vital::Glucose => self.glucose.as_ref(),
        }
    }
}

/// Effect of one treatment while on and in the step it is withdrawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentEffect {
    pub on: VitalTables,
    pub withdrawal: VitalTables,
    /// Vitals exempt from fluctuation while the treatment is on.
    pub suppress_on: Vec<Vital>,
    /// Vitals exempt from fluctuation in the withdrawal step.
    pub suppress_withdrawal: Vec<Vital>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Antibiotics,
    Vasopressors,
    Ventilation,
}

impl Treatment {
    /// Bit position within `[antibiotics, vasopressors, ventilation]`.
    pub fn bit(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    pub p_diabetes: f64,
    pub heart_rate: Vec<f64>,
    pub blood_pressure: Vec<f64>,
    pub oxygen: Vec<f64>,
    pub glucose_non_diabetic: Vec<f64>,
    pub glucose_diabetic: Vec<f64>,
    /// Redraw initial states that already satisfy a terminal rule.
    pub resample_terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRules {
    /// Normal level of each vital, `[hr, bp, o2, glucose]`.
    pub normal: [usize; 4],
    /// Death when at least this many vitals are abnormal.
    pub death_abnormal: usize,
    pub death_reward: f64,
    pub discharge_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationProtocol {
    /// Discount used to plan the optimal policy.
    pub planning_gamma: f64,
    /// Discount used when scoring a policy.
    pub evaluation_gamma: f64,
    /// Scoring horizon; `None` scores the infinite-horizon discounted value.
    pub evaluation_horizon: Option<usize>,
    /// Truncation length of logged episodes.
    pub episode_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepsisConfig {
    #[serde(default)]
    pub description: String,
    pub treatment_order: Vec<Treatment>,
    pub antibiotics: TreatmentEffect,
    pub vasopressors: TreatmentEffect,
    pub ventilation: TreatmentEffect,
    pub fluctuation: VitalTables,
    pub initial: InitialDistribution,
    pub terminal: TerminalRules,
    pub evaluation: EvaluationProtocol,
}

pub const REFERENCE_CONFIG_JSON: &str = include_str!("../data/sepsis_reference.json");

fn check_vector(v: &[f64], len: usize, what: &str) -> Result<(), SepsisError> {
    if v.len() != len {
        return Err(SepsisError::Config(format!("{what} has {} entries, expected {len}", v.len())));
    }
    if v.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
        return Err(SepsisError::Config(format!("{what} has an entry outside [0, 1]")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(SepsisError::Config(format!("{what} sums to {s}")));
    }
    Ok(())
}

fn check_tables(t: &VitalTables, what: &str) -> Result<(), SepsisError> {
    for v in Vital::ALL {
        if let Some(c) = t.get(v) {
            for (tag, m) in [("non_diabetic", &c.non_diabetic), ("diabetic", &c.diabetic)] {
                if m.len() != v.levels() {
                    return Err(SepsisError::Config(format!(
                        "{what}.{v:?}.{tag} has {} rows, expected {}",
                        m.len(),
                        v.levels()
                    )));
                }
                for (i, row) in m.iter().enumerate() {
                    check_vector(row, v.levels(), &format!("{what}.{v:?}.{tag}[{i}]"))?;
                }
            }
        }
    }
    Ok(())
}

impl SepsisConfig {
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_CONFIG_JSON).expect("bundled reference configuration parses")
    }

    pub fn from_json(text: &str) -> Result<Self, SepsisError> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| SepsisError::Parse { path: "<string>".into(), source: e })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, SepsisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SepsisError::Io { path: path.display().to_string(), source: e })?;
        let c: Self = serde_json::from_str(&text)
            .map_err(|e| SepsisError::Parse { path: path.display().to_string(), source: e })?;
        c.validate()?;
        Ok(c)
    }

    pub fn effect(&self, t: Treatment) -> &TreatmentEffect {
        match t {
            Treatment::Antibiotics => &self.antibiotics,
            Treatment::Vasopressors => &self.vasopressors,
            Treatment::Ventilation => &self.ventilation,
        }
    }

    pub fn validate(&self) -> Result<(), SepsisError> {
        let mut order = self.treatment_order.clone();
        order.sort_by_key(|t| t.bit());
        if order != [Treatment::Antibiotics, Treatment::Vasopressors, Treatment::Ventilation] {
            return Err(SepsisError::Config("treatment_order must list each treatment once".into()));
        }
        for t in &self.treatment_order {
            let e = self.effect(*t);
            check_tables(&e.on, &format!("{t:?}.on"))?;
            check_tables(&e.withdrawal, &format!("{t:?}.withdrawal"))?;
        }
        check_tables(&self.fluctuation, "fluctuation")?;
        let i = &self.initial;
        if !(0.0..=1.0).contains(&i.p_diabetes) {
            return Err(SepsisError::Config("p_diabetes outside [0, 1]".into()));
        }
        check_vector(&i.heart_rate, 3, "initial.heart_rate")?;
        check_vector(&i.blood_pressure, 3, "initial.blood_pressure")?;
        check_vector(&i.oxygen, 2, "initial.oxygen")?;
        check_vector(&i.glucose_non_diabetic, 5, "initial.glucose_non_diabetic")?;
        check_vector(&i.glucose_diabetic, 5, "initial.glucose_diabetic")?;
        for (v, &n) in Vital::ALL.iter().zip(&self.terminal.normal) {
            if n >= v.levels() {
                return Err(SepsisError::Config(format!("normal level {n} out of range for {v:?}")));
            }
        }
        let e = &self.evaluation;
        if !(0.0..1.0).contains(&e.planning_gamma)
            || !(0.0..=1.0).contains(&e.evaluation_gamma)
            || e.episode_length == 0
            || e.evaluation_horizon == Some(0)
        {
            return Err(SepsisError::Config("evaluation protocol out of range".into()));
        }
        if e.evaluation_horizon.is_none() && e.evaluation_gamma >= 1.0 {
            return Err(SepsisError::Config("an infinite scoring horizon needs evaluation_gamma < 1".into()));
        }
        Ok(())
    }

    pub fn abnormal_count(&self, s: &SepsisState) -> usize {
        s.vitals.iter().zip(&self.terminal.normal).filter(|(v, n)| v != n).count()
    }

    /// `Some(reward)` if `s` satisfies a terminal rule. Death takes precedence.
    pub fn terminal_reward(&self, s: &SepsisState) -> Option<f64> {
        let k = self.abnormal_count(s);
        if k >= self.terminal.death_abnormal {
            Some(self.terminal.death_reward)
        } else if k == 0 && !s.treatments.iter().any(|&t| t) {
            Some(self.terminal.discharge_reward)
        } else {
            None
        }
    }

    /// Per-vital next-level laws before flags are updated.
    pub fn vital_laws(&self, s: &SepsisState, action: usize) -> [Vec<f64>; 4] {
        let bits = action_bits(action);
        let mut laws: [Vec<f64>; 4] = std::array::from_fn(|k| {
            let mut v = vec![0.0; LEVELS[k]];
            v[s.vitals[k]] = 1.0;
            v
        });
        let mut fluctuates = [true; 4];
        for (tables, suppressed) in self.active_stages(s, bits) {
            for v in Vital::ALL {
                if let Some(c) = tables.get(v) {
                    laws[v as usize] = push_forward(&laws[v as usize], c.get(s.diabetic));
                }
            }
            for v in suppressed {
                fluctuates[*v as usize] = false;
            }
        }
        for v in Vital::ALL {
            if let (true, Some(c)) = (fluctuates[v as usize], self.fluctuation.get(v)) {
                laws[v as usize] = push_forward(&laws[v as usize], c.get(s.diabetic));
            }
        }
        laws
    }

    fn active_stages<'a>(&'a self, s: &SepsisState, bits: [bool; 3]) -> Vec<(&'a VitalTables, &'a [Vital])> {
        self.treatment_order
            .iter()
            .filter_map(|&t| {
                let e = self.effect(t);
                if bits[t.bit()] {
                    Some((&e.on, e.suppress_on.as_slice()))
                } else if s.treatments[t.bit()] {
                    Some((&e.withdrawal, e.suppress_withdrawal.as_slice()))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Initial law over the 1442 indices of the enumerated MDP.
    pub fn initial_distribution(&self) -> Vec<f64> {
        let i = &self.initial;
        let mut mu = vec![0.0; N_STATES];
        for s in SepsisState::all() {
            if s.treatments.iter().any(|&t| t) {
                continue;
            }
            let (pd, glucose) = if s.diabetic {
                (i.p_diabetes, &i.glucose_diabetic)
            } else {
                (1.0 - i.p_diabetes, &i.glucose_non_diabetic)
            };
            let p = pd
                * i.heart_rate[s.vitals[0]]
                * i.blood_pressure[s.vitals[1]]
                * i.oxygen[s.vitals[2]]
                * glucose[s.vitals[3]];
            if i.resample_terminal && self.terminal_reward(&s).is_some() {
                continue;
            }
            mu[s.index()] = p;
        }
        let z: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|p| *p /= z);
        mu
    }
}

fn push_forward(law: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; law.len()];
    for (i, &p) in law.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, &q) in m[i].iter().enumerate() {
            out[j] += p * q;
        }
    }
    out
}

/// Index drawn by inverse CDF from one uniform; never returns a zero-mass index.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

// ── Simulation ──────────────────────────────────────────────────────────

/// Outcome of one simulator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: SepsisState,
    pub reward: f64,
    pub done: bool,
}

/// Samples one transition. A state that already satisfies a terminal rule is
/// absorbing: it is returned unchanged with reward 0 and `done = true`.
pub fn step<R: Rng + ?Sized>(state: &SepsisState, action: usize, rng: &mut R, config: &SepsisConfig) -> StepOutcome {
    if config.terminal_reward(state).is_some() {
        return StepOutcome { next: *state, reward: 0.0, done: true };
    }
    let bits = action_bits(action);
    let mut next = *state;
    let mut fluctuates = [true; 4];
    for (tables, suppressed) in config.active_stages(state, bits) {
        for v in Vital::ALL {
            if let Some(c) = tables.get(v) {
                let k = v as usize;
                next.vitals[k] = sample_categorical(&c.get(state.diabetic)[next.vitals[k]], rng.gen::<f64>());
            }
        }
        for v in suppressed {
            fluctuates[*v as usize] = false;
        }
    }
    for v in Vital::ALL {
        let k = v as usize;
        if let (true, Some(c)) = (fluctuates[k], config.fluctuation.get(v)) {
            next.vitals[k] = sample_categorical(&c.get(state.diabetic)[next.vitals[k]], rng.gen::<f64>());
        }
    }
    next.treatments = bits;
    match config.terminal_reward(&next) {
        Some(r) => StepOutcome { next, reward: r, done: true },
        None => StepOutcome { next, reward: 0.0, done: false },
    }
}

/// Draws an initial state from the configured law.
pub fn sample_initial<R: Rng + ?Sized>(rng: &mut R, config: &SepsisConfig) -> SepsisState {
    let i = &config.initial;
    loop {
        let diabetic = rng.gen::<f64>() < i.p_diabetes;
        let hr = sample_categorical(&i.heart_rate, rng.gen::<f64>());
        let bp = sample_categorical(&i.blood_pressure, rng.gen::<f64>());
        let o2 = sample_categorical(&i.oxygen, rng.gen::<f64>());
        let g = if diabetic { &i.glucose_diabetic } else { &i.glucose_non_diabetic };
        let glucose = sample_categorical(g, rng.gen::<f64>());
        let s = SepsisState { vitals: [hr, bp, o2, glucose], diabetic, treatments: [false; 3] };
        if !i.resample_terminal || config.terminal_reward(&s).is_none() {
            return s;
        }
    }
}

// ── Enumeration ─────────────────────────────────────────────────────────

/// Exact tabular model. Transitions that satisfy a terminal rule move to
/// [`DEATH`] or [`DISCHARGE`] and pay the terminal reward up front; those
/// two states and every configuration that already satisfies a terminal rule
/// loop on themselves with reward 0.
pub fn enumerate_mdp(config: &SepsisConfig) -> Result<TabularMdp, SepsisError> {
    config.validate()?;
    let mut rows: Vec<SparseRow> = Vec::with_capacity(N_STATES * N_ACTIONS);
    let mut reward = Vec::with_capacity(N_STATES * N_ACTIONS);
    for idx in 0..N_STATES {
        let Some(s) = SepsisState::from_index(idx) else {
            for _ in 0..N_ACTIONS {
                rows.push(vec![(idx, 1.0)]);
                reward.push(0.0);
            }
            continue;
        };
        if config.terminal_reward(&s).is_some() {
            for _ in 0..N_ACTIONS {
                rows.push(vec![(idx, 1.0)]);
                reward.push(0.0);
            }
            continue;
        }
        for a in 0..N_ACTIONS {
            let laws = config.vital_laws(&s, a);
            let bits = action_bits(a);
            let mut acc: Vec<(usize, f64)> = Vec::new();
            let (mut p_death, mut p_discharge) = (0.0, 0.0);
            for hr in 0..3 {
                let p0 = laws[0][hr];
                if p0 == 0.0 {
                    continue;
                }
                for bp in 0..3 {
                    let p1 = p0 * laws[1][bp];
                    if p1 == 0.0 {
                        continue;
                    }
                    for o2 in 0..2 {
                        let p2 = p1 * laws[2][o2];
                        if p2 == 0.0 {
                            continue;
                        }
                        for g in 0..5 {
                            let p = p2 * laws[3][g];
                            if p == 0.0 {
                                continue;
                            }
                            let next = SepsisState { vitals: [hr, bp, o2, g], diabetic: s.diabetic, treatments: bits };
                            if config.terminal_reward(&next).is_none() {
                                acc.push((next.index(), p));
                            } else if config.abnormal_count(&next) >= config.terminal.death_abnormal {
                                p_death += p;
                            } else {
                                p_discharge += p;
                            }
                        }
                    }
                }
            }
            if p_death > 0.0 {
                acc.push((DEATH, p_death));
            }
            if p_discharge > 0.0 {
                acc.push((DISCHARGE, p_discharge));
            }
            reward.push(p_death * config.terminal.death_reward + p_discharge * config.terminal.discharge_reward);
            rows.push(acc);
        }
    }
    Ok(TabularMdp::from_sparse(
        N_STATES,
        action_space(),
        rows,
        reward,
        config.evaluation.planning_gamma,
        config.initial_distribution(),
    )?)
}

#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub q: QTable,
    pub policy: Policy,
    /// `Σ μ0 V*` under the planning discount, infinite horizon.
    pub discounted_value: f64,
    /// Value of `policy` under the configured evaluation protocol.
    pub value: f64,
}

/// Value iteration at `gamma` on the enumerated model, scored under the
/// configured evaluation discount and horizon.
pub fn optimal_policy(config: &SepsisConfig, gamma: f64) -> Result<OptimalSolution, SepsisError> {
    let mdp = enumerate_mdp(config)?.with_gamma(gamma)?;
    optimal_policy_for(&mdp, config)
}

pub fn optimal_policy_for(mdp: &TabularMdp, config: &SepsisConfig) -> Result<OptimalSolution, SepsisError> {
    let (q, policy) = value_iteration(mdp, 1e-10)?;
    let discounted_value = crate::mdp::start_value(mdp, &policy, &q);
    let value = evaluate_online(mdp, &policy, config)?;
    Ok(OptimalSolution { q, policy, discounted_value, value })
}

/// Tolerance of the iterative scorer, in value units.
pub const EVALUATION_TOL: f64 = 1e-10;

/// Value of `policy` on the enumerated model under the configured scoring
/// discount and horizon, from the configured initial law.
pub fn evaluate_online(mdp: &TabularMdp, policy: &Policy, config: &SepsisConfig) -> Result<f64, MdpError> {
    let eval = mdp.with_gamma(config.evaluation.evaluation_gamma)?;
    match config.evaluation.evaluation_horizon {
        Some(h) => finite_horizon_value(&eval, policy, h),
        None => policy_value_iterative(&eval, policy, EVALUATION_TOL),
    }
}
