//! Executable fixtures built from the one- and two-dimensional chain MDPs.
//!
//! Indexing used throughout:
//!
//! | index | 2D state | | index | joint action |
//! |-------|----------|-|-------|--------------|
//! | 0 | `s_{0,0}` | | 0 | `↙ = [←, ↓]` |
//! | 1 | `s_{0,1}` | | 1 | `↖ = [←, ↑]` |
//! | 2 | `s_{1,0}` | | 2 | `↘ = [→, ↓]` |
//! | 3 | `s_{1,1}` | | 3 | `↗ = [→, ↑]` |
//!
//! State `s_{x,y}` has index `2x + y` and the x-chain is the most significant
//! dimension, matching `compose_parallel` and `action_index`. The five-state
//! abstraction example orders its states `s_{0,0}, s_{0,1}, s̃_{0,1}, s_{1,0},
//! s_{1,1}`.

use crate::conditions::{
    check_theorem1_with_horizon, evaluate_q, AbstractionSet, Theorem1Report, DEFAULT_CONDITION_TOL,
};
use crate::factorization::fit_factored_q;
use crate::mdp::{compose_parallel, FactoredActionSpace, MdpError, Policy, QTable, TabularMdp};

pub const SW: usize = 0;
pub const NW: usize = 1;
pub const SE: usize = 2;
pub const NE: usize = 3;

pub const S00: usize = 0;
pub const S01: usize = 1;
pub const S10: usize = 2;
pub const S11: usize = 3;

/// Default branch probability of `↖` from `s_{0,0}` in the five-state example.
pub const FIG2_DEFAULT_P: f64 = 0.5;

/// Horizon for the undiscounted fixture; every chain there is absorbed within two steps.
pub const UNDISCOUNTED_HORIZON: usize = 50;

/// Expected component tables laid out over the joint `(s, a)` grid.
#[derive(Debug, Clone)]
pub struct ExpectedComponents {
    pub tables: Vec<Vec<Vec<f64>>>,
    /// Component chains and policies whose Q-functions should reproduce `tables`.
    pub models: Option<(Vec<TabularMdp>, Vec<Policy>)>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub phi: AbstractionSet,
    /// `None` for exact evaluation, `Some(h)` for `h`-step evaluation.
    pub horizon: Option<usize>,
    pub expected_q: Vec<(usize, Vec<f64>)>,
    pub expected_fit: Vec<(usize, Vec<f64>)>,
    pub components: Option<ExpectedComponents>,
    /// Expected `[transition, reward, policy]` satisfaction.
    pub expected_conditions: [bool; 3],
}

#[derive(Debug, Clone)]
pub struct FixtureOutcome {
    pub name: &'static str,
    pub q: QTable,
    pub report: Theorem1Report,
    pub failures: Vec<String>,
}

impl FixtureOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn compare(failures: &mut Vec<String>, tol: f64, what: String, got: &[f64], want: &[f64]) {
    let bad = got.len() != want.len() || got.iter().zip(want).any(|(g, w)| (g - w).abs() > tol);
    if bad {
        failures.push(format!("{what}: got {got:?}, expected {want:?}"));
    }
}

impl Fixture {
    pub fn evaluate_q(&self) -> Result<QTable, MdpError> {
        evaluate_q(&self.mdp, &self.policy, self.horizon)
    }

    /// Compares every expected quantity within `tol`.
    pub fn run(&self, tol: f64) -> Result<FixtureOutcome, crate::conditions::ConditionError> {
        let q = self.evaluate_q()?;
        let mut failures = Vec::new();
        for (s, want) in &self.expected_q {
            compare(&mut failures, tol, format!("Q(state {s})"), q.row(*s), want);
        }
        for (s, want) in &self.expected_fit {
            let (_, fit) = fit_factored_q(q.row(*s), self.mdp.actions())?;
            compare(&mut failures, tol, format!("Q-hat(state {s})"), &fit, want);
        }
        if let Some(comp) = &self.components {
            let na = self.mdp.n_actions();
            for s in 0..self.mdp.n_states() {
                let sum: Vec<f64> =
                    (0..na).map(|a| comp.tables.iter().map(|t| t[s][a]).sum()).collect();
                compare(&mut failures, tol, format!("sum of components (state {s})"), &sum, q.row(s));
            }
            let all_hold = self.expected_conditions.iter().all(|&c| c);
            for (d, t) in comp.tables.iter().enumerate().filter(|_| all_hold) {
                for s in 0..self.mdp.n_states() {
                    for a in 0..na {
                        let (zd, ad) = (self.phi.phi(d, s), self.mdp.actions().decompose(a)[d]);
                        for s2 in 0..self.mdp.n_states() {
                            for a2 in 0..na {
                                let same = self.phi.phi(d, s2) == zd && self.mdp.actions().decompose(a2)[d] == ad;
                                if same && (t[s][a] - t[s2][a2]).abs() > tol {
                                    failures.push(format!(
                                        "component {d} differs between ({s},{a}) and ({s2},{a2})"
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            if let Some((mdps, pols)) = &comp.models {
                let qs = mdps
                    .iter()
                    .zip(pols)
                    .map(|(m, p)| evaluate_q(m, p, self.horizon))
                    .collect::<Result<Vec<_>, _>>()?;
                for (d, t) in comp.tables.iter().enumerate() {
                    for s in 0..self.mdp.n_states() {
                        let sd = self.phi.phi(d, s);
                        let got: Vec<f64> = (0..self.mdp.n_actions())
                            .map(|a| qs[d].get(sd, self.mdp.actions().decompose(a)[d]))
                            .collect();
                        compare(&mut failures, tol, format!("component {d} from its own chain (state {s})"), &got, &t[s]);
                    }
                }
            }
        }
        let report = check_theorem1_with_horizon(&self.mdp, &self.policy, &self.phi, DEFAULT_CONDITION_TOL, self.horizon)?;
        let got = [report.transition.satisfied, report.reward.satisfied, report.policy.satisfied];
        if got != self.expected_conditions {
            failures.push(format!(
                "conditions [transition, reward, policy] = {got:?}, expected {:?}",
                self.expected_conditions
            ));
        }
        if !report.sound {
            failures.push("all conditions hold but the Q-function is not decomposable".into());
        }
        Ok(FixtureOutcome { name: self.name, q, report, failures })
    }
}

// ── Builders ────────────────────────────────────────────────────────────

/// Two-state chain: `←` stays at `s0`, `→` moves to absorbing `s1` for +1.
pub fn chain_1d(gamma: f64) -> TabularMdp {
    TabularMdp::new(
        FactoredActionSpace::new(vec![2]).expect("valid space"),
        vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
        vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        gamma,
        vec![1.0, 0.0],
    )
    .expect("chain is well formed")
}

/// Parallel composition of two chains, started at `s_{0,0}`.
pub fn chain_2d(gamma: f64) -> TabularMdp {
    let c = chain_1d(gamma);
    compose_parallel(&[c.clone(), c]).expect("equal discounts")
}

fn coordinate_phi() -> AbstractionSet {
    AbstractionSet::from_product(&[2, 2]).expect("coordinate maps are valid")
}

fn det(actions: &[usize]) -> Policy {
    Policy::deterministic(actions, 4).expect("actions in range")
}

/// Rebuilds `base` after editing its dense tensor and reward table.
pub fn edit_mdp(
    base: &TabularMdp,
    edit: impl FnOnce(&mut Vec<Vec<Vec<f64>>>, &mut Vec<Vec<f64>>),
) -> TabularMdp {
    let mut t = base.dense_transition();
    let mut r = base.reward_table();
    edit(&mut t, &mut r);
    TabularMdp::new(base.actions().clone(), t, r, base.gamma(), base.initial_dist().to_vec())
        .expect("edited MDP stays valid")
}

fn point(n: usize, to: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[to] = 1.0;
    v
}

/// Five-state example in which `↖` from `s_{0,0}` splits between `s_{0,1}`
/// (probability `p`) and its twin `s̃_{0,1}`.
pub fn fig2_mdp(p: f64, gamma: f64) -> TabularMdp {
    const A: usize = 0; // s00
    const B: usize = 1; // s01
    const C: usize = 2; // s̃01
    const D: usize = 3; // s10
    const E: usize = 4; // s11
    let mut t = vec![vec![vec![0.0; 5]; 4]; 5];
    let mut r = vec![vec![0.0; 4]; 5];
    t[A][SW] = point(5, A);
    t[A][NW] = {
        let mut v = vec![0.0; 5];
        v[B] = p;
        v[C] = 1.0 - p;
        v
    };
    t[A][SE] = point(5, D);
    t[A][NE] = point(5, E);
    r[A] = vec![0.0, 1.0, 1.0, 2.0];
    for s in [B, C] {
        t[s][SW] = point(5, s);
        t[s][NW] = point(5, s);
        t[s][SE] = point(5, E);
        t[s][NE] = point(5, E);
        r[s] = vec![0.0, 0.0, 1.0, 1.0];
    }
    t[D][SW] = point(5, D);
    t[D][SE] = point(5, D);
    t[D][NW] = point(5, E);
    t[D][NE] = point(5, E);
    r[D] = vec![0.0, 1.0, 0.0, 1.0];
    for a in 0..4 {
        t[E][a] = point(5, E);
    }
    TabularMdp::new(
        FactoredActionSpace::new(vec![2, 2]).expect("valid space"),
        t,
        r,
        gamma,
        point(5, A),
    )
    .expect("five-state example is well formed")
}

pub fn fig2_phi() -> AbstractionSet {
    AbstractionSet::new(vec![vec![0, 0, 0, 1, 1], vec![0, 1, 1, 0, 1]]).expect("valid maps")
}

pub fn fig2_policy() -> Policy {
    Policy::deterministic(&[NE, SE, SE, NE, SE], 4).expect("valid policy")
}

/// Chain whose `↗` from `s_{0,1}` loops back with reward `1 − γ`.
///
/// `r(s_{0,0}, ↙) = γ(1 − γ)` (0.09 at `γ = 0.9`) so that `Q(s_{0,0}, ·)`
/// is `[2γ, 1 + γ, 1 + γ, 2]`. With the plain chain reward of 0 the first
/// entry would be `γ(1 + γ)`, which is not decomposable.
pub fn fig3_mdp(gamma: f64) -> TabularMdp {
    edit_mdp(&chain_2d(gamma), |t, r| {
        t[S01][NE] = point(4, S01);
        r[S01][NE] = 1.0 - gamma;
        r[S00][SW] = gamma * (1.0 - gamma);
    })
}

pub fn fig3_policy() -> Policy {
    det(&[NW, NE, NE, NE])
}

fn standard(name: &'static str, summary: &'static str, policy: [usize; 4], q00: [f64; 4], fit00: [f64; 4]) -> Fixture {
    Fixture {
        name,
        summary,
        mdp: chain_2d(0.9),
        policy: det(&policy),
        phi: coordinate_phi(),
        horizon: None,
        expected_q: vec![(S00, q00.to_vec())],
        expected_fit: vec![(S00, fit00.to_vec())],
        components: None,
        expected_conditions: [true, true, false],
    }
}

fn c2(name: &'static str, summary: &'static str, policy: [usize; 4], q: [[f64; 4]; 4], qx: [[f64; 4]; 4], qy: [[f64; 4]; 4], px: [usize; 2], py: [usize; 2]) -> Fixture {
    let chain = chain_1d(0.9);
    let rows = |m: [[f64; 4]; 4]| m.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    Fixture {
        name,
        summary,
        mdp: chain_2d(0.9),
        policy: det(&policy),
        phi: coordinate_phi(),
        horizon: None,
        expected_q: q.iter().enumerate().map(|(s, r)| (s, r.to_vec())).collect(),
        expected_fit: q.iter().enumerate().map(|(s, r)| (s, r.to_vec())).collect(),
        components: Some(ExpectedComponents {
            tables: vec![rows(qx), rows(qy)],
            models: Some((
                vec![chain.clone(), chain],
                vec![
                    Policy::deterministic(&px, 2).expect("valid"),
                    Policy::deterministic(&py, 2).expect("valid"),
                ],
            )),
        }),
        expected_conditions: [true, true, true],
    }
}

/// Every fixture, in a stable order.
pub fn build_gallery() -> Vec<Fixture> {
    build_gallery_with_p(FIG2_DEFAULT_P)
}

pub fn build_gallery_with_p(p: f64) -> Vec<Fixture> {
    let mut g = Vec::new();

    g.push(Fixture {
        name: "figC1a_chain",
        summary: "one-dimensional chain, always right",
        mdp: chain_1d(0.9),
        policy: Policy::deterministic(&[1, 1], 2).expect("valid"),
        phi: AbstractionSet::new(vec![vec![0, 1]]).expect("valid"),
        horizon: None,
        expected_q: vec![(0, vec![0.9, 1.0]), (1, vec![0.0, 0.0])],
        expected_fit: vec![(0, vec![0.9, 1.0])],
        components: None,
        expected_conditions: [true, true, true],
    });

    let opt_q = [[1.8, 1.9, 1.9, 2.0], [0.9, 0.9, 1.0, 1.0], [0.9, 1.0, 0.9, 1.0], [0.0; 4]];
    g.push(c2(
        "figC2_optimal",
        "two-dimensional chain, optimal policy ↗ everywhere",
        [NE, NE, NE, NE],
        opt_q,
        [[0.9, 0.9, 1.0, 1.0], [0.9, 0.9, 1.0, 1.0], [0.0; 4], [0.0; 4]],
        [[0.9, 1.0, 0.9, 1.0], [0.0; 4], [0.9, 1.0, 0.9, 1.0], [0.0; 4]],
        [1, 1],
        [1, 1],
    ));
    g.push(c2(
        "figC2_nonoptimal",
        "two-dimensional chain, policy [↖, ↖, ↗, ↗]",
        [NW, NW, NE, NE],
        [[0.9, 1.0, 1.9, 2.0], [0.0, 0.0, 1.0, 1.0], [0.9, 1.0, 0.9, 1.0], [0.0; 4]],
        [[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0], [0.0; 4], [0.0; 4]],
        [[0.9, 1.0, 0.9, 1.0], [0.0; 4], [0.9, 1.0, 0.9, 1.0], [0.0; 4]],
        [0, 1],
        [1, 1],
    ));
    g.push(c2(
        "figC2_nonoptimal2",
        "two-dimensional chain, policy [↙, ↖, ↘, ↗]",
        [SW, NW, SE, NE],
        [[0.0, 1.0, 1.0, 2.0], [0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 0.0, 1.0], [0.0; 4]],
        [[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0], [0.0; 4], [0.0; 4]],
        [[0.0, 1.0, 0.0, 1.0], [0.0; 4], [0.0, 1.0, 0.0, 1.0], [0.0; 4]],
        [0, 1],
        [0, 1],
    ));

    g.push(Fixture {
        name: "fig2",
        summary: "five-state abstraction example, all conditions hold",
        mdp: fig2_mdp(p, 0.9),
        policy: fig2_policy(),
        phi: fig2_phi(),
        horizon: None,
        expected_q: vec![(0, vec![1.8, 1.9, 1.9, 2.0])],
        expected_fit: vec![(0, vec![1.8, 1.9, 1.9, 2.0])],
        components: None,
        expected_conditions: [true, true, true],
    });

    g.push(Fixture {
        name: "fig3",
        summary: "looping ↗ from s01; every condition fails yet Q decomposes",
        mdp: fig3_mdp(0.9),
        policy: fig3_policy(),
        phi: coordinate_phi(),
        horizon: None,
        expected_q: vec![(S00, vec![1.8, 1.9, 1.9, 2.0])],
        expected_fit: vec![(S00, vec![1.8, 1.9, 1.9, 2.0])],
        components: None,
        expected_conditions: [false, false, false],
    });

    let c3: [(&'static str, [usize; 4], [f64; 4], [f64; 4]); 7] = [
        ("figC3_row1", [NW, NE, NE, NE], [1.71, 1.9, 1.9, 2.0], [1.7325, 1.8775, 1.8775, 2.0225]),
        ("figC3_row2", [SW, NE, NE, NE], [0.0, 1.9, 1.9, 2.0], [0.45, 1.45, 1.45, 2.45]),
        ("figC3_row3", [SE, SW, SE, SE], [0.9, 1.0, 1.0, 2.0], [0.675, 1.225, 1.225, 1.775]),
        ("figC3_row4", [SW, SE, SE, SE], [0.0, 1.9, 1.0, 2.0], [0.225, 1.675, 0.775, 2.225]),
        ("figC3_row5", [NE, NW, NE, NE], [1.8, 1.0, 1.9, 2.0], [1.575, 1.225, 2.125, 1.775]),
        ("figC3_row6", [SE, NW, NE, NE], [1.71, 1.0, 1.9, 2.0], [1.5075, 1.2025, 2.1025, 1.7975]),
        ("figC3_row7", [NE, NW, SE, SE], [1.8, 1.0, 1.0, 2.0], [1.35, 1.45, 1.45, 1.55]),
    ];
    for (name, pol, q, fit) in c3 {
        g.push(standard(name, "policy takes different sub-actions within one abstract state", pol, q, fit));
    }

    g.push(Fixture {
        name: "figC4_transition_violation",
        summary: "↗ from s10 loops back with no reward",
        mdp: figc4_mdp(0.9),
        policy: det(&[NE, NE, NE, NE]),
        phi: coordinate_phi(),
        horizon: None,
        expected_q: vec![(S00, vec![1.8, 1.9, 1.0, 2.0])],
        expected_fit: vec![(S00, vec![1.575, 2.125, 1.225, 1.775])],
        components: None,
        expected_conditions: [false, false, true],
    });

    g.push(Fixture {
        name: "figC5_reward_violation",
        summary: "r(s00, ↗) = 1 instead of 1 + 1",
        mdp: figc5_mdp(0.9),
        policy: det(&[NE, NE, NE, NE]),
        phi: coordinate_phi(),
        horizon: None,
        expected_q: vec![(S00, vec![0.9, 1.9, 1.9, 1.0])],
        expected_fit: vec![(S00, vec![1.375, 1.425, 1.425, 1.475])],
        components: None,
        expected_conditions: [true, false, true],
    });

    g.push(Fixture {
        name: "figC6_adversarial",
        summary: "undiscounted, non-additive rewards that still yield a decomposable Q",
        mdp: figc6_mdp(),
        policy: det(&[SE, SW, SE, SW]),
        phi: coordinate_phi(),
        horizon: Some(UNDISCOUNTED_HORIZON),
        expected_q: vec![
            (S00, vec![8.5, 3.0, 7.0, 1.5]),
            (S01, vec![0.0, 0.0, 1.0, 1.0]),
            (S10, vec![0.0, 4.0, 0.0, 4.0]),
            (S11, vec![0.0; 4]),
        ],
        expected_fit: vec![(S00, vec![8.5, 3.0, 7.0, 1.5])],
        components: Some(ExpectedComponents {
            tables: vec![
                vec![vec![1.5, 1.5, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0], vec![0.0; 4], vec![0.0; 4]],
                vec![vec![7.0, 1.5, 7.0, 1.5], vec![0.0; 4], vec![0.0, 4.0, 0.0, 4.0], vec![0.0; 4]],
            ],
            models: None,
        }),
        expected_conditions: [true, false, false],
    });

    let decomposed = |name, summary, mdp, policy: [usize; 4], q00: [f64; 4], cond| Fixture {
        name,
        summary,
        mdp,
        policy: det(&policy),
        phi: coordinate_phi(),
        horizon: None,
        expected_q: vec![(S00, q00.to_vec())],
        expected_fit: vec![(S00, q00.to_vec())],
        components: None,
        expected_conditions: cond,
    };
    g.push(decomposed(
        "prop1_transition_only",
        "↖ from s00 lands on s10; only the transition condition fails",
        edit_mdp(&chain_2d(0.9), |t, _| t[S00][NW] = point(4, S10)),
        [NE, NE, NE, NE],
        [1.8, 1.9, 1.9, 2.0],
        [false, true, true],
    ));
    g.push(decomposed(
        "prop2_reward_only",
        "r(s00, ·) = [1.9, 1, 1, 1]; only the reward condition fails",
        edit_mdp(&chain_2d(0.9), |_, r| r[S00] = vec![1.9, 1.0, 1.0, 1.0]),
        [NE, NE, NE, NE],
        [2.8, 1.9, 1.9, 1.0],
        [true, false, true],
    ));
    g.push(decomposed(
        "prop3_policy_only",
        "policy switches to ↙ in the absorbing state; only the policy condition fails",
        chain_2d(0.9),
        [NE, NE, NE, SW],
        [1.8, 1.9, 1.9, 2.0],
        [true, true, false],
    ));
    g.push(decomposed(
        "gamma0_transition_violation",
        "looping ↗ from s10 with γ = 0; Q equals the additive reward",
        figc4_mdp(0.0),
        [NE, NE, NE, NE],
        [0.0, 1.0, 1.0, 2.0],
        [false, false, true],
    ));
    g.push(decomposed(
        "gamma0_policy_violation",
        "policy [↖, ↗, ↗, ↗] with γ = 0; Q equals the reward",
        chain_2d(0.0),
        [NW, NE, NE, NE],
        [0.0, 1.0, 1.0, 2.0],
        [true, true, false],
    ));
    g
}

/// Chain whose `↗` from `s_{1,0}` loops back to `s_{1,0}` with reward 0.
pub fn figc4_mdp(gamma: f64) -> TabularMdp {
    edit_mdp(&chain_2d(gamma), |t, r| {
        t[S10][NE] = point(4, S10);
        r[S10][NE] = 0.0;
    })
}

pub fn figc5_mdp(gamma: f64) -> TabularMdp {
    edit_mdp(&chain_2d(gamma), |_, r| r[S00][NE] = 1.0)
}

/// Undiscounted chain with `r(s_{0,0}, ·) = [1.5, 3, 7, 1.5]` and reward 4 for `↑` from `s_{1,0}`.
pub fn figc6_mdp() -> TabularMdp {
    edit_mdp(&chain_2d(1.0), |_, r| {
        r[S00] = vec![1.5, 3.0, 7.0, 1.5];
        r[S10] = vec![0.0, 4.0, 0.0, 4.0];
    })
}

pub fn find(name: &str) -> Option<Fixture> {
    build_gallery().into_iter().find(|f| f.name == name)
}
