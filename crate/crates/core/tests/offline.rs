use faqtor_core::factorization::{free_parameter_count, condensed_width};
use faqtor_core::gallery::{chain_1d, chain_2d};
use faqtor_core::mdp::{policy_evaluation_exact, value_iteration, FactoredActionSpace, Policy, QTable, TabularMdp};
use faqtor_core::offline::*;
use faqtor_core::sepsis::{self, SepsisConfig};
use proptest::prelude::*;

fn record(episode: usize, t: usize, s: usize, a: usize, r: f64, s_next: usize, done: bool) -> Transition {
    Transition { episode, t, s, a, r, s_next, done }
}

fn dataset(records: Vec<Transition>) -> Dataset {
    let n = records.last().map_or(0, |r| r.episode + 1);
    Dataset {
        records,
        seed: 0,
        spec: DatasetSpec { environment: "hand".into(), n_episodes: n, max_len: 20, rho: None },
    }
}

/// One single-step episode per non-terminal `(s, a)` of a deterministic MDP.
fn full_coverage(mdp: &TabularMdp) -> Dataset {
    let env = TabularEnv::new(mdp);
    let mut records = Vec::new();
    for s in 0..mdp.n_states() {
        if env.is_terminal(s) {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let row = mdp.row(s, a);
            assert_eq!(row.len(), 1, "deterministic rows only");
            let next = row[0].0;
            let e = records.len();
            records.push(record(e, 0, s, a, mdp.reward(s, a), next, env.is_terminal(next)));
        }
    }
    dataset(records)
}

fn optimal(mdp: &TabularMdp) -> (QTable, Policy) {
    value_iteration(mdp, 1e-13).unwrap()
}

// ── Behavior policies and datasets ──────────────────────────────────────

#[test]
fn behavior_policy_examples() {
    let opt = Policy::deterministic(&[1, 5, 7], 8).unwrap();
    let b = make_behavior_policy(&opt, 0.125).unwrap();
    assert!(b.table().iter().flatten().all(|&p| (p - 0.125).abs() < 1e-15));
    assert_eq!(make_behavior_policy(&opt, 1.0).unwrap(), opt);
    let b = make_behavior_policy(&opt, 0.3).unwrap();
    assert_eq!(b.prob(1, 5), 0.3);
    assert!((b.prob(1, 0) - 0.1).abs() < 1e-15);
    assert!((rho_from_epsilon(0.1, 8) - 0.9125).abs() < 1e-15);
    assert!((rho_from_epsilon(0.5, 8) - 0.5625).abs() < 1e-15);
    assert!(make_behavior_policy(&opt, 1.5).is_err());
    assert!(make_behavior_policy(&Policy::uniform(2, 8), 0.5).is_err());
}

#[test]
fn optimal_chain_rollouts() {
    let mdp = chain_1d(0.9);
    let (_, pi) = optimal(&mdp);
    let behavior = make_behavior_policy(&pi, 1.0).unwrap();
    let env = TabularEnv::new(&mdp);
    let data = generate_dataset(&env, &behavior, 50, 20, 4, Some(1.0)).unwrap();
    assert_eq!(data.records.len(), 50);
    for (e, r) in data.records.iter().enumerate() {
        assert_eq!(*r, record(e, 0, 0, 1, 1.0, 1, true));
    }
    data.validate().unwrap();
}

#[test]
fn datasets_are_reproducible() {
    let config = SepsisConfig::reference();
    let env = SepsisEnv { config: &config };
    let b = Policy::uniform(sepsis::N_STATES, sepsis::N_ACTIONS);
    let a1 = generate_dataset(&env, &b, 200, 20, 11, Some(0.125)).unwrap();
    let a2 = generate_dataset(&env, &b, 200, 20, 11, Some(0.125)).unwrap();
    let other = generate_dataset(&env, &b, 200, 20, 12, Some(0.125)).unwrap();
    assert_eq!(a1.to_csv(), a2.to_csv());
    assert_ne!(a1.to_csv(), other.to_csv());
    a1.validate().unwrap();
    assert_eq!(a1.episodes().len(), 200);
    assert!(a1.episodes().iter().all(|ep| ep.len() <= 20));
    // A shorter run is a prefix: episodes draw from independent streams.
    let short = generate_dataset(&env, &b, 50, 20, 11, Some(0.125)).unwrap();
    assert_eq!(short.records[..], a1.records[..short.records.len()]);
}

#[test]
fn uniform_behavior_action_frequencies() {
    let config = SepsisConfig::reference();
    let env = SepsisEnv { config: &config };
    let sol = sepsis::optimal_policy(&config, 0.99).unwrap();
    let b = make_behavior_policy(&sol.policy, 0.125).unwrap();
    let data = generate_dataset(&env, &b, 3000, 20, 1, Some(0.125)).unwrap();
    let n = 10_000;
    assert!(data.records.len() >= n);
    let mut counts = [0usize; 8];
    for r in &data.records[..n] {
        counts[r.a] += 1;
    }
    let (mean, sd) = (n as f64 / 8.0, (n as f64 * 0.125 * 0.875).sqrt());
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn csv_round_trip() {
    let mdp = chain_2d(0.9);
    let env = TabularEnv::new(&mdp);
    let data = generate_dataset(&env, &Policy::uniform(4, 4), 30, 5, 9, None).unwrap();
    let dir = std::env::temp_dir().join(format!("faqtor-offline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("data.csv");
    data.write(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("episode,t,s,a,r,s_next,done\n"));
    assert_eq!(Dataset::read(&path).unwrap(), data);
    std::fs::write(&path, text.replace("episode,t", "ep,t")).unwrap();
    assert!(Dataset::read(&path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

// ── FQI ─────────────────────────────────────────────────────────────────

#[test]
fn tabular_fqi_recovers_chain_values() {
    let mdp = chain_1d(0.9);
    let data = full_coverage(&mdp);
    let config = FqiConfig { mode: ActionFeatures::Baseline, iterations: 3, ridge: 0.0, clip: (-1.0, 1.0), gamma: 0.9 };
    let out = fqi(&data, mdp.actions(), &StateFeatures::Tabular { n_states: 2 }, &config).unwrap();
    assert_eq!(out.iterations.len(), 3);
    assert_eq!(out.iterations[0].q.row(0), [0.0, 1.0]);
    for it in &out.iterations[1..] {
        assert!((it.q.get(0, 0) - 0.9).abs() < 1e-12 && (it.q.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(it.policy.action(0), Some(1));
    }
}

#[test]
fn factored_fqi_reaches_the_composed_optimum() {
    let mdp = chain_2d(0.9);
    let (q_star, _) = optimal(&mdp);
    let data = full_coverage(&mdp);
    for ridge in [0.0, 1e-9] {
        let config = FqiConfig { mode: ActionFeatures::Factored, iterations: 300, ridge, clip: (-10.0, 10.0), gamma: 0.9 };
        let out = fqi(&data, mdp.actions(), &StateFeatures::Tabular { n_states: 4 }, &config).unwrap();
        let last = out.last();
        assert!(last.q.max_abs_diff(&q_star) < 1e-6, "ridge {ridge}: {:?}", last.q.values());
        // Sub-actions of an absorbed component tie, so compare values rather than argmaxes.
        let exact = policy_evaluation_exact(&mdp, &last.policy).unwrap();
        assert!(exact.max_abs_diff(&q_star) < 1e-9);
    }
    // The same data through matrix features equal to the identity.
    let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
    let config = FqiConfig { mode: ActionFeatures::Factored, iterations: 300, ridge: 0.0, clip: (-10.0, 10.0), gamma: 0.9 };
    let out = fqi(&data, mdp.actions(), &StateFeatures::Matrix(eye), &config).unwrap();
    assert!(out.last().q.max_abs_diff(&q_star) < 1e-6);
}

#[test]
fn zero_discount_regresses_rewards() {
    let space = FactoredActionSpace::new(vec![2]).unwrap();
    let data = dataset(vec![
        record(0, 0, 0, 0, 1.0, 1, false),
        record(1, 0, 0, 0, 0.0, 1, false),
        record(2, 0, 0, 1, 0.5, 0, false),
        record(3, 0, 1, 1, -0.25, 0, true),
    ]);
    let config = FqiConfig { mode: ActionFeatures::Baseline, iterations: 1, ridge: 0.0, clip: (-1.0, 1.0), gamma: 0.0 };
    let out = fqi(&data, &space, &StateFeatures::Tabular { n_states: 2 }, &config).unwrap();
    assert_eq!(out.last().q.values(), [0.5, 0.5, 0.0, -0.25]);
}

#[test]
fn fqi_rejects_bad_input() {
    let space = FactoredActionSpace::new(vec![2]).unwrap();
    let data = dataset(vec![record(0, 0, 0, 3, 1.0, 1, true)]);
    let tab = StateFeatures::Tabular { n_states: 2 };
    assert!(fqi(&data, &space, &tab, &FqiConfig::default()).is_err());
    let ok = dataset(vec![record(0, 0, 0, 1, 1.0, 1, true)]);
    let bad = FqiConfig { ridge: -1.0, ..FqiConfig::default() };
    assert!(fqi(&ok, &space, &tab, &bad).is_err());
    let bad = FqiConfig { iterations: 0, ..FqiConfig::default() };
    assert!(fqi(&ok, &space, &tab, &bad).is_err());
}

#[test]
fn factored_design_is_smaller() {
    for c in [&[2, 2][..], &[2, 2, 2], &[3, 2], &[4, 3, 2], &[5, 5]] {
        let space = FactoredActionSpace::new(c.to_vec()).unwrap();
        let (full, factored) = free_parameter_count(&space, 1);
        assert_eq!(ActionFeatures::Baseline.width(&space), full);
        assert_eq!(ActionFeatures::Factored.width(&space), factored);
        assert_eq!(factored, condensed_width(&space));
        assert!(factored < full);
    }
}

// ── Off-policy evaluation ───────────────────────────────────────────────

#[test]
fn wis_examples() {
    let data = dataset(vec![record(0, 0, 0, 0, 0.0, 0, true), record(1, 0, 1, 0, 1.0, 1, true)]);
    let behavior = Policy::from_table(vec![vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap();
    let target = Policy::from_table(vec![vec![0.5, 0.5], vec![0.75, 0.25]]).unwrap();
    assert_eq!(episode_weights(&data, &target, &behavior).unwrap(), vec![1.0, 3.0]);
    assert!((wis_estimate(&data, &target, &behavior, 1.0).unwrap() - 0.75).abs() < 1e-15);
    assert!((wis_estimate(&data, &behavior, &behavior, 1.0).unwrap() - 0.5).abs() < 1e-15);

    let one = dataset(vec![record(0, 0, 0, 1, 0.0, 0, false), record(0, 1, 0, 0, 2.0, 0, true)]);
    let v = wis_estimate(&one, &target, &behavior, 0.5).unwrap();
    assert!((v - 1.0).abs() < 1e-15);

    let never = Policy::from_table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    match wis_estimate(&data, &target, &never, 1.0) {
        Err(OfflineError::SupportViolation { episode, t, state, action }) => {
            assert_eq!((episode, t, state, action), (0, 0, 0, 0));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn wis_with_target_equal_behavior_is_the_mean_return() {
    let mdp = chain_2d(0.9);
    let env = TabularEnv::new(&mdp);
    let b = Policy::from_table(vec![vec![0.1, 0.2, 0.3, 0.4]; 4]).unwrap();
    let data = generate_dataset(&env, &b, 400, 6, 2, None).unwrap();
    let returns: Vec<f64> = data
        .episodes()
        .iter()
        .map(|ep| ep.iter().rev().fold(0.0, |g, r| r.r + 0.9 * g))
        .collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    assert!((wis_estimate(&data, &b, &b, 0.9).unwrap() - mean).abs() < 1e-12);
}

#[test]
fn ess_examples() {
    assert_eq!(ess(&[2.0; 7]).unwrap(), 7.0);
    assert!((ess(&[1.0, 1.0, 2.0]).unwrap() - 8.0 / 3.0).abs() < 1e-12);
    assert_eq!(ess(&[0.0, 4.0, 0.0]).unwrap(), 1.0);
    assert!(ess(&[0.0, 0.0]).is_err());
    assert!(ess(&[1.0, -1.0]).is_err());
}

proptest! {
    #[test]
    fn ess_is_bounded_and_scale_free(w in prop::collection::vec(0.0f64..10.0, 1..40), c in 0.01f64..100.0) {
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let e = ess(&w).unwrap();
        prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 + 1e-12);
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        prop_assert!((ess(&scaled).unwrap() - e).abs() < 1e-9 * e);
    }
}

// ── BCQ ─────────────────────────────────────────────────────────────────

#[test]
fn bcq_thresholds() {
    let q = QTable::new(2, 3, vec![0.0, 5.0, 3.0, 1.0, 2.0, 3.0], 0.9).unwrap();
    let counts = counts_from_dataset(
        &dataset(vec![
            record(0, 0, 0, 0, 0.0, 0, false),
            record(0, 1, 0, 0, 0.0, 0, false),
            record(0, 2, 0, 2, 0.0, 1, false),
            record(0, 3, 1, 0, 0.0, 1, false),
            record(0, 4, 1, 1, 0.0, 1, false),
            record(0, 5, 1, 1, 0.0, 1, true),
        ]),
        2,
        3,
    );
    assert_eq!(counts, vec![vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]]);
    let greedy = q.greedy();
    assert_eq!(bcq_filter(&q, &counts, 0.0), greedy);
    assert_eq!(bcq_filter(&q, &counts, 0.5).table(), Policy::deterministic(&[2, 1], 3).unwrap().table());
    let modal = bcq_filter(&q, &counts, 0.999);
    assert_eq!(modal.action(0), Some(0));
    assert_eq!(modal.action(1), Some(1));
}
