//! Checker for the three sufficient conditions under which a policy's
//! Q-function is linearly decomposable over the action dimensions:
//! factored abstract transitions, additive abstract rewards and a
//! per-dimension factored policy, all relative to a candidate abstraction set.
//!
//! A failing check never implies the Q-function is *not* decomposable; the
//! combined verdict is "guaranteed" or "not guaranteed".

use crate::factorization::{check_decomposability, lstsq_min_norm, DecompositionReport, FactorError};
use crate::mdp::{
    h_step_q, mixed_radix_digits, mixed_radix_index, policy_evaluation_exact, MdpError, Policy, QTable,
    TabularMdp,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONDITION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionError {
    #[error("invalid abstraction: {0}")]
    Abstraction(String),
    #[error("abstraction does not fit the problem: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

// ── Abstractions ────────────────────────────────────────────────────────

/// Per-dimension surjective maps `φ_d : S → Z_d`, pairwise distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AbstractionDocument", into = "AbstractionDocument")]
pub struct AbstractionSet {
    maps: Vec<Vec<usize>>,
    cards: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractionDocument {
    pub maps: Vec<Vec<usize>>,
}

impl TryFrom<AbstractionDocument> for AbstractionSet {
    type Error = ConditionError;
    fn try_from(d: AbstractionDocument) -> Result<Self, Self::Error> {
        Self::new(d.maps)
    }
}

impl From<AbstractionSet> for AbstractionDocument {
    fn from(a: AbstractionSet) -> Self {
        Self { maps: a.maps }
    }
}

impl AbstractionSet {
    pub fn new(maps: Vec<Vec<usize>>) -> Result<Self, ConditionError> {
        let n = maps.first().map_or(0, Vec::len);
        if maps.is_empty() || n == 0 {
            return Err(ConditionError::Abstraction("no maps or no states".into()));
        }
        let mut cards = Vec::with_capacity(maps.len());
        for (d, m) in maps.iter().enumerate() {
            if m.len() != n {
                return Err(ConditionError::Abstraction(format!(
                    "map {d} covers {} states, map 0 covers {n}",
                    m.len()
                )));
            }
            let k = m.iter().max().unwrap() + 1;
            let mut seen = vec![false; k];
            for &z in m {
                seen[z] = true;
            }
            if let Some(z) = seen.iter().position(|&x| !x) {
                return Err(ConditionError::Abstraction(format!(
                    "map {d} is not surjective: abstract state {z} has no preimage"
                )));
            }
            cards.push(k);
        }
        for i in 0..maps.len() {
            for j in i + 1..maps.len() {
                if maps[i] == maps[j] {
                    return Err(ConditionError::Abstraction(format!("maps {i} and {j} are identical")));
                }
            }
        }
        Ok(Self { maps, cards })
    }

    /// Coordinate maps for a joint state space built by `compose_parallel`.
    pub fn from_product(state_counts: &[usize]) -> Result<Self, ConditionError> {
        let n: usize = state_counts.iter().product();
        let maps = (0..state_counts.len())
            .map(|d| (0..n).map(|s| mixed_radix_digits(s, state_counts)[d]).collect())
            .collect();
        Self::new(maps)
    }

    pub fn dims(&self) -> usize {
        self.maps.len()
    }

    pub fn n_states(&self) -> usize {
        self.maps[0].len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn maps(&self) -> &[Vec<usize>] {
        &self.maps
    }

    pub fn phi(&self, d: usize, s: usize) -> usize {
        self.maps[d][s]
    }

    pub fn n_joint(&self) -> usize {
        self.cards.iter().product()
    }

    /// Row-major index of `φ(s) = (φ_1(s), …, φ_D(s))`.
    pub fn joint(&self, s: usize) -> usize {
        let z: Vec<usize> = self.maps.iter().map(|m| m[s]).collect();
        mixed_radix_index(&z, &self.cards).expect("abstract coordinates in range")
    }

    pub fn joint_digits(&self, z: usize) -> Vec<usize> {
        mixed_radix_digits(z, &self.cards)
    }
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Transition,
    Reward,
    Policy,
}

/// One mismatch between two quantities that the condition requires equal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub dimension: Option<usize>,
    pub description: String,
    pub expected: f64,
    pub observed: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    pub satisfied: bool,
    pub violations: Vec<Violation>,
}

impl ConditionReport {
    fn from_violations(condition: ConditionKind, violations: Vec<Violation>) -> Self {
        Self { condition, satisfied: violations.is_empty(), violations }
    }
}

fn violation(
    state: Option<usize>,
    action: Option<usize>,
    dimension: Option<usize>,
    description: String,
    expected: f64,
    observed: f64,
) -> Violation {
    Violation { state, action, dimension, description, expected, observed, gap: (expected - observed).abs() }
}

fn check_shape(n_states: usize, phi: &AbstractionSet, dims: usize) -> Result<(), ConditionError> {
    if phi.n_states() != n_states {
        return Err(ConditionError::Mismatch(format!(
            "abstraction covers {} states, problem has {n_states}",
            phi.n_states()
        )));
    }
    if phi.dims() != dims {
        return Err(ConditionError::Mismatch(format!(
            "abstraction has {} maps, action space has {dims} dimensions",
            phi.dims()
        )));
    }
    Ok(())
}

/// First state of every abstract joint state, `None` when unpopulated.
fn representatives(phi: &AbstractionSet) -> Vec<Option<usize>> {
    let mut rep = vec![None; phi.n_joint()];
    for s in 0..phi.n_states() {
        let z = phi.joint(s);
        if rep[z].is_none() {
            rep[z] = Some(s);
        }
    }
    rep
}

// ── Transition condition ────────────────────────────────────────────────

/// Decides whether aggregated transitions factor as `∏_d p_d(z'_d | z_d, a_d)`.
///
/// Stages: aggregate to `T(z'|s,a)`; require `T` to depend on `s` only via
/// `φ(s)`; take marginals over each coordinate and require them to depend only
/// on `(z_d, a_d)`; require their product to reproduce `T`. Witnesses come
/// from the first failing stage. If any factorization exists, the marginals
/// are the only candidates, so the procedure is complete.
pub fn check_transition_condition(
    mdp: &TabularMdp,
    phi: &AbstractionSet,
    tol: f64,
) -> Result<ConditionReport, ConditionError> {
    let space = mdp.actions();
    check_shape(mdp.n_states(), phi, space.dims())?;
    let nz = phi.n_joint();
    let na = mdp.n_actions();
    let joint_of: Vec<usize> = (0..mdp.n_states()).map(|s| phi.joint(s)).collect();
    let aggregate = |s: usize, a: usize| {
        let mut t = vec![0.0; nz];
        for &(j, p) in mdp.row(s, a) {
            t[joint_of[j]] += p;
        }
        t
    };
    let kind = ConditionKind::Transition;

    let reps = representatives(phi);
    let mut violations = Vec::new();
    let mut t_rep: Vec<Option<Vec<Vec<f64>>>> = vec![None; nz];
    for (z, rep) in reps.iter().enumerate() {
        if let Some(r) = *rep {
            t_rep[z] = Some((0..na).map(|a| aggregate(r, a)).collect());
        }
    }
    for s in 0..mdp.n_states() {
        let z = joint_of[s];
        let r = reps[z].unwrap();
        if r == s {
            continue;
        }
        for a in 0..na {
            let t = aggregate(s, a);
            let tr = &t_rep[z].as_ref().unwrap()[a];
            if let Some(zp) = (0..nz).find(|&zp| (t[zp] - tr[zp]).abs() > tol) {
                violations.push(violation(
                    Some(s),
                    Some(a),
                    None,
                    format!("aggregated probability of abstract state {zp} differs from state {r} sharing its abstraction"),
                    tr[zp],
                    t[zp],
                ));
            }
        }
    }
    if !violations.is_empty() {
        return Ok(ConditionReport::from_violations(kind, violations));
    }

    let dims = phi.dims();
    let cards = phi.cardinalities();
    let sub_cards = space.cardinalities();
    // marginal[z][a][d][z'_d]
    let mut marginal: Vec<Option<Vec<Vec<Vec<f64>>>>> = vec![None; nz];
    for z in 0..nz {
        let Some(rows) = &t_rep[z] else { continue };
        let m = rows
            .iter()
            .map(|t| {
                let mut md: Vec<Vec<f64>> = cards.iter().map(|&k| vec![0.0; k]).collect();
                for (zp, &p) in t.iter().enumerate() {
                    for (d, &c) in phi.joint_digits(zp).iter().enumerate() {
                        md[d][c] += p;
                    }
                }
                md
            })
            .collect();
        marginal[z] = Some(m);
    }
    for d in 0..dims {
        let mut first: Vec<Option<(usize, usize)>> = vec![None; cards[d] * sub_cards[d]];
        for z in 0..nz {
            let Some(mz) = &marginal[z] else { continue };
            let zd = phi.joint_digits(z)[d];
            for a in 0..na {
                let ad = space.decompose(a)[d];
                let key = zd * sub_cards[d] + ad;
                match first[key] {
                    None => first[key] = Some((z, a)),
                    Some((z0, a0)) => {
                        let m0 = &marginal[z0].as_ref().unwrap()[a0][d];
                        let m1 = &mz[a][d];
                        if let Some(c) = (0..cards[d]).find(|&c| (m0[c] - m1[c]).abs() > tol) {
                            violations.push(violation(
                                reps[z],
                                Some(a),
                                Some(d),
                                format!(
                                    "marginal p_{d}(z'={c} | z_{d}={zd}, a_{d}={ad}) differs from the one at state {} action {a0}",
                                    reps[z0].unwrap()
                                ),
                                m0[c],
                                m1[c],
                            ));
                        }
                    }
                }
            }
        }
    }
    if !violations.is_empty() {
        return Ok(ConditionReport::from_violations(kind, violations));
    }

    for z in 0..nz {
        let (Some(rows), Some(mz)) = (&t_rep[z], &marginal[z]) else { continue };
        for a in 0..na {
            for zp in 0..nz {
                let prod: f64 = phi.joint_digits(zp).iter().enumerate().map(|(d, &c)| mz[a][d][c]).product();
                if (prod - rows[a][zp]).abs() > tol {
                    violations.push(violation(
                        reps[z],
                        Some(a),
                        None,
                        format!("product of marginals for abstract next state {zp} differs from the aggregate"),
                        prod,
                        rows[a][zp],
                    ));
                    break;
                }
            }
        }
    }
    Ok(ConditionReport::from_violations(kind, violations))
}

// ── Reward condition ────────────────────────────────────────────────────

/// Decides whether `r(s, a) = Σ_d r_d(φ_d(s), a_d)`.
///
/// Each witness compares the observed reward with the additive prediction
/// obtained without that entry (leave-one-out), so a single corrupted entry
/// is reported against the value the remaining entries imply.
pub fn check_reward_condition(
    mdp: &TabularMdp,
    phi: &AbstractionSet,
    tol: f64,
) -> Result<ConditionReport, ConditionError> {
    let space = mdp.actions();
    check_shape(mdp.n_states(), phi, space.dims())?;
    let kind = ConditionKind::Reward;
    let na = mdp.n_actions();
    let reps = representatives(phi);
    let mut violations = Vec::new();
    for s in 0..mdp.n_states() {
        let r = reps[phi.joint(s)].unwrap();
        if r == s {
            continue;
        }
        for a in 0..na {
            if (mdp.reward(s, a) - mdp.reward(r, a)).abs() > tol {
                violations.push(violation(
                    Some(s),
                    Some(a),
                    None,
                    format!("reward differs from state {r} sharing its abstraction"),
                    mdp.reward(r, a),
                    mdp.reward(s, a),
                ));
            }
        }
    }
    if !violations.is_empty() {
        return Ok(ConditionReport::from_violations(kind, violations));
    }

    let cards = phi.cardinalities();
    let sub = space.cardinalities();
    let offsets: Vec<usize> = cards
        .iter()
        .zip(sub)
        .scan(0, |acc, (&k, &c)| {
            let o = *acc;
            *acc += k * c;
            Some(o)
        })
        .collect();
    let width: usize = cards.iter().zip(sub).map(|(k, c)| k * c).sum();
    let mut keys = Vec::new();
    for (z, rep) in reps.iter().enumerate() {
        if let Some(s) = *rep {
            for a in 0..na {
                keys.push((z, s, a));
            }
        }
    }
    let mut x = DMatrix::zeros(keys.len(), width);
    let mut y = Vec::with_capacity(keys.len());
    for (i, &(z, s, a)) in keys.iter().enumerate() {
        let zz = phi.joint_digits(z);
        let aa = space.decompose(a);
        for d in 0..zz.len() {
            x[(i, offsets[d] + zz[d] * sub[d] + aa[d])] = 1.0;
        }
        y.push(mdp.reward(s, a));
    }
    let w = lstsq_min_norm(&x, &y)?;
    let hat = &x * crate::factorization::pinv(&x);
    for (i, &(_, s, a)) in keys.iter().enumerate() {
        let fit: f64 = x.row(i).iter().zip(&w).map(|(u, v)| u * v).sum();
        let e = y[i] - fit;
        if e.abs() >= tol {
            let h = hat[(i, i)];
            let loo = if (1.0 - h).abs() > 1e-12 { y[i] - e / (1.0 - h) } else { fit };
            violations.push(violation(
                Some(s),
                Some(a),
                None,
                "reward is not the sum of per-dimension abstract rewards".into(),
                loo,
                y[i],
            ));
        }
    }
    violations.sort_by(|p, q| q.gap.total_cmp(&p.gap));
    Ok(ConditionReport::from_violations(kind, violations))
}

// ── Policy condition ────────────────────────────────────────────────────

/// Decides whether `π(a|s) = ∏_d π_d(a_d | φ_d(s))`.
pub fn check_policy_condition(
    pi: &Policy,
    space: &crate::mdp::FactoredActionSpace,
    phi: &AbstractionSet,
    tol: f64,
) -> Result<ConditionReport, ConditionError> {
    check_shape(pi.n_states(), phi, space.dims())?;
    if pi.n_actions() != space.total() {
        return Err(ConditionError::Mismatch("policy width differs from the action space".into()));
    }
    let kind = ConditionKind::Policy;
    let na = space.total();
    let reps = representatives(phi);
    let mut violations = Vec::new();
    for s in 0..pi.n_states() {
        let r = reps[phi.joint(s)].unwrap();
        if r == s {
            continue;
        }
        if let Some(a) = (0..na).find(|&a| (pi.prob(s, a) - pi.prob(r, a)).abs() > tol) {
            violations.push(violation(
                Some(s),
                Some(a),
                None,
                format!("action probability differs from state {r} sharing its abstraction"),
                pi.prob(r, a),
                pi.prob(s, a),
            ));
        }
    }
    if !violations.is_empty() {
        return Ok(ConditionReport::from_violations(kind, violations));
    }

    let sub = space.cardinalities();
    let dims = space.dims();
    let marginals = |s: usize| -> Vec<Vec<f64>> {
        let mut m: Vec<Vec<f64>> = sub.iter().map(|&c| vec![0.0; c]).collect();
        for a in 0..na {
            for (d, &ad) in space.decompose(a).iter().enumerate() {
                m[d][ad] += pi.prob(s, a);
            }
        }
        m
    };
    for rep in reps.iter().flatten() {
        let m = marginals(*rep);
        for a in 0..na {
            let prod: f64 = space.decompose(a).iter().enumerate().map(|(d, &ad)| m[d][ad]).product();
            if (prod - pi.prob(*rep, a)).abs() > tol {
                violations.push(violation(
                    Some(*rep),
                    Some(a),
                    None,
                    "sub-actions are not chosen independently".into(),
                    prod,
                    pi.prob(*rep, a),
                ));
                break;
            }
        }
    }
    if !violations.is_empty() {
        return Ok(ConditionReport::from_violations(kind, violations));
    }

    for d in 0..dims {
        let mut first: Vec<Option<usize>> = vec![None; phi.cardinalities()[d]];
        for rep in reps.iter().flatten() {
            let zd = phi.phi(d, *rep);
            match first[zd] {
                None => first[zd] = Some(*rep),
                Some(s0) => {
                    let m0 = &marginals(s0)[d];
                    let m1 = &marginals(*rep)[d];
                    if let Some(ad) = (0..sub[d]).find(|&c| (m0[c] - m1[c]).abs() > tol) {
                        violations.push(violation(
                            Some(*rep),
                            None,
                            Some(d),
                            format!(
                                "π_{d}(a_{d}={ad} | z_{d}={zd}) differs from state {s0} with the same z_{d}"
                            ),
                            m0[ad],
                            m1[ad],
                        ));
                    }
                }
            }
        }
    }
    Ok(ConditionReport::from_violations(kind, violations))
}

// ── Combined verdict ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Guaranteed,
    NotGuaranteed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub transition: ConditionReport,
    pub reward: ConditionReport,
    pub policy: ConditionReport,
    pub verdict: Verdict,
    pub decomposition: DecompositionReport,
    /// False only if every condition holds yet some residual reaches `tol`.
    pub sound: bool,
}

/// Q-function used by the combined check: exact for `γ < 1`, `horizon`-step
/// otherwise.
pub fn evaluate_q(mdp: &TabularMdp, pi: &Policy, horizon: Option<usize>) -> Result<QTable, MdpError> {
    match horizon {
        Some(h) => h_step_q(mdp, pi, h),
        None => policy_evaluation_exact(mdp, pi),
    }
}

pub fn check_theorem1(
    mdp: &TabularMdp,
    pi: &Policy,
    phi: &AbstractionSet,
    tol: f64,
) -> Result<Theorem1Report, ConditionError> {
    check_theorem1_with_horizon(mdp, pi, phi, tol, None)
}

pub fn check_theorem1_with_horizon(
    mdp: &TabularMdp,
    pi: &Policy,
    phi: &AbstractionSet,
    tol: f64,
    horizon: Option<usize>,
) -> Result<Theorem1Report, ConditionError> {
    let transition = check_transition_condition(mdp, phi, tol)?;
    let reward = check_reward_condition(mdp, phi, tol)?;
    let policy = check_policy_condition(pi, mdp.actions(), phi, tol)?;
    let q = evaluate_q(mdp, pi, horizon)?;
    let decomposition = check_decomposability(&q, mdp.actions(), tol.max(f64::EPSILON))?;
    let all = transition.satisfied && reward.satisfied && policy.satisfied;
    let verdict = if all { Verdict::Guaranteed } else { Verdict::NotGuaranteed };
    let sound = !all || decomposition.decomposable;
    Ok(Theorem1Report { transition, reward, policy, verdict, decomposition, sound })
}
