#![allow(dead_code)]

use faqtor_core::conditions::AbstractionSet;
use faqtor_core::mdp::{compose_factored_policy, compose_parallel, FactoredActionSpace, Policy, TabularMdp};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Probability vector with roughly a third of the entries zeroed.
pub fn random_distribution(rng: &mut Pcg64, n: usize) -> Vec<f64> {
    let keep = rng.gen_range(0..n);
    let mut v: Vec<f64> = (0..n)
        .map(|i| if i == keep || rng.gen::<f64>() > 0.33 { rng.gen::<f64>() + 1e-3 } else { 0.0 })
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn random_mdp(rng: &mut Pcg64, space: FactoredActionSpace, n_states: usize, gamma: f64) -> TabularMdp {
    let na = space.total();
    let t = (0..n_states)
        .map(|_| (0..na).map(|_| random_distribution(rng, n_states)).collect())
        .collect();
    let r = (0..n_states).map(|_| (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let init = random_distribution(rng, n_states);
    TabularMdp::new(space, t, r, gamma, init).expect("random MDP is valid")
}

pub fn random_policy(rng: &mut Pcg64, n_states: usize, n_actions: usize) -> Policy {
    Policy::from_table((0..n_states).map(|_| random_distribution(rng, n_actions)).collect()).unwrap()
}

/// A random parallel composition of one-dimensional components together with
/// a factored policy and the coordinate abstraction.
pub struct Composition {
    pub components: Vec<TabularMdp>,
    pub policies: Vec<Policy>,
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub phi: AbstractionSet,
}

pub fn random_composition(rng: &mut Pcg64) -> Composition {
    let dims = rng.gen_range(2..=3);
    let gamma = rng.gen_range(0.0..0.95);
    let mut components = Vec::new();
    let mut policies = Vec::new();
    for _ in 0..dims {
        let ns = rng.gen_range(2..=3);
        let na = rng.gen_range(2..=3);
        let m = random_mdp(rng, FactoredActionSpace::new(vec![na]).unwrap(), ns, gamma);
        policies.push(random_policy(rng, ns, na));
        components.push(m);
    }
    let mdp = compose_parallel(&components).unwrap();
    let policy = compose_factored_policy(&policies, &components).unwrap();
    let counts: Vec<usize> = components.iter().map(TabularMdp::n_states).collect();
    let phi = AbstractionSet::from_product(&counts).unwrap();
    Composition { components, policies, mdp, policy, phi }
}
