use faqtor_core::mdp::{Policy, TabularMdp};
use faqtor_core::sepsis::*;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use std::collections::HashMap;

fn reference_mdp() -> (SepsisConfig, TabularMdp) {
    let config = SepsisConfig::reference();
    let mdp = enumerate_mdp(&config).unwrap();
    (config, mdp)
}

fn outcome_index(out: &StepOutcome, config: &SepsisConfig) -> usize {
    if !out.done {
        out.next.index()
    } else if config.abnormal_count(&out.next) >= config.terminal.death_abnormal {
        DEATH
    } else {
        DISCHARGE
    }
}

fn live_states(config: &SepsisConfig) -> Vec<SepsisState> {
    SepsisState::all().filter(|s| config.terminal_reward(s).is_none()).collect()
}

#[test]
fn rows_are_distributions_and_absorbing_states_loop() {
    let (config, mdp) = reference_mdp();
    assert_eq!((mdp.n_states(), mdp.n_actions()), (N_STATES, N_ACTIONS));
    for s in 0..N_STATES {
        for a in 0..N_ACTIONS {
            let total: f64 = mdp.row(s, a).iter().map(|&(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12, "row ({s},{a}) sums to {total}");
        }
    }
    let terminal: Vec<usize> = SepsisState::all()
        .filter(|s| config.terminal_reward(s).is_some())
        .map(|s| s.index())
        .chain([DEATH, DISCHARGE])
        .collect();
    for s in terminal {
        for a in 0..N_ACTIONS {
            assert_eq!(mdp.row(s, a), [(s, 1.0)]);
            assert_eq!(mdp.reward(s, a), 0.0);
        }
    }
}

#[test]
fn simulator_matches_enumeration() {
    let (config, mdp) = reference_mdp();
    let live = live_states(&config);
    let mut pick = Pcg64::seed_from_u64(17);
    let n = 100_000usize;
    for _ in 0..20 {
        let s = live[pick.gen_range(0..live.len())];
        let a = pick.gen_range(0..N_ACTIONS);
        let mut rng = Pcg64::seed_from_u64(pick.gen());
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for _ in 0..n {
            *counts.entry(outcome_index(&step(&s, a, &mut rng, &config), &config)).or_default() += 1;
        }
        for (&j, _) in &counts {
            assert!(mdp.prob(s.index(), a, j) > 0.0, "sampled impossible successor {j} of ({s:?}, {a})");
        }
        for &(j, p) in mdp.row(s.index(), a) {
            let f = counts.get(&j).copied().unwrap_or(0) as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() <= 3.0 * se, "({s:?}, {a}) -> {j}: frequency {f}, probability {p}, se {se}");
        }
    }
}

#[test]
fn terminal_rules() {
    let config = SepsisConfig::reference();
    // hr high, bp low, o2 low: three abnormal vitals.
    let dying = SepsisState { vitals: [2, 0, 0, 2], diabetic: false, treatments: [false; 3] };
    assert_eq!(config.terminal_reward(&dying), Some(-1.0));
    let healthy = SepsisState { vitals: [1, 1, 1, 2], diabetic: true, treatments: [false; 3] };
    assert_eq!(config.terminal_reward(&healthy), Some(1.0));
    let treated = SepsisState { treatments: [false, false, true], ..healthy };
    assert_eq!(config.terminal_reward(&treated), None);
    for s in SepsisState::all() {
        let k = config.abnormal_count(&s);
        let dies = k >= config.terminal.death_abnormal;
        let leaves = k == 0 && !s.treatments.iter().any(|&t| t);
        assert!(!(dies && leaves));
        match config.terminal_reward(&s) {
            Some(r) if dies => assert_eq!(r, -1.0),
            Some(r) => assert!(leaves && r == 1.0),
            None => assert!(!dies && !leaves),
        }
    }
}

#[test]
fn sampled_steps_pay_terminal_rewards() {
    let config = SepsisConfig::reference();
    let mut rng = Pcg64::seed_from_u64(5);
    let (mut deaths, mut discharges) = (0, 0);
    for s in live_states(&config).into_iter().step_by(7) {
        for a in 0..N_ACTIONS {
            let out = step(&s, a, &mut rng, &config);
            let k = config.abnormal_count(&out.next);
            if k >= 3 {
                assert!(out.done && out.reward == -1.0);
                deaths += 1;
            } else if k == 0 && a == 0 {
                assert!(out.done && out.reward == 1.0);
                discharges += 1;
            } else {
                assert!(!out.done && out.reward == 0.0);
            }
            assert_eq!(out.next.treatments, action_bits(a));
            assert_eq!(out.next.diabetic, s.diabetic);
        }
    }
    assert!(deaths > 0 && discharges > 0);
}

#[test]
fn steps_are_deterministic_given_the_seed() {
    let config = SepsisConfig::reference();
    let s = SepsisState { vitals: [0, 2, 0, 3], diabetic: true, treatments: [true, false, true] };
    let run = || {
        let mut rng = Pcg64::seed_from_u64(99);
        (0..50).map(|k| step(&s, k % 8, &mut rng, &config)).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
    let a = sample_initial(&mut Pcg64::seed_from_u64(3), &config);
    let b = sample_initial(&mut Pcg64::seed_from_u64(3), &config);
    assert_eq!(a, b);
    assert!(config.terminal_reward(&a).is_none());
    assert!(!a.treatments.iter().any(|&t| t));
}

#[test]
fn initial_law_matches_sampler() {
    let config = SepsisConfig::reference();
    let mu = config.initial_distribution();
    assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut rng = Pcg64::seed_from_u64(8);
    let n = 200_000;
    let mut counts = vec![0usize; N_STATES];
    for _ in 0..n {
        counts[sample_initial(&mut rng, &config).index()] += 1;
    }
    for (i, &p) in mu.iter().enumerate() {
        let f = counts[i] as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((f - p).abs() <= 4.0 * se + 1e-12, "state {i}: {f} vs {p}");
    }
}

#[test]
fn features_are_one_hot_blocks() {
    let mut seen = std::collections::HashSet::new();
    for s in SepsisState::all() {
        let x = featurize(&s);
        assert_eq!(x.iter().filter(|&&v| v == 1.0).count(), FEATURE_GROUPS);
        assert_eq!(x.iter().filter(|&&v| v != 0.0).count(), FEATURE_GROUPS);
        assert!(seen.insert(x.map(|v| v as u8)));
    }
    let s = SepsisState { vitals: [1, 1, 1, 2], diabetic: false, treatments: [false; 3] };
    let ones: Vec<usize> = featurize(&s).iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
    assert_eq!(ones, vec![1, 4, 7, 10, 13, 15, 17, 19]);
    let m = feature_matrix();
    assert_eq!(m.len(), N_STATES);
    assert!(m[DEATH].iter().chain(&m[DISCHARGE]).all(|&v| v == 0.0));
}

#[test]
fn treatments_touch_only_their_vitals() {
    let config = SepsisConfig::reference();
    // (bit mask, vitals the treatment may change)
    let scopes: [(usize, &[usize]); 3] = [(4, &[0, 1]), (2, &[1, 3]), (1, &[2])];
    for s in live_states(&config) {
        for a in 0..N_ACTIONS {
            for (mask, scope) in scopes {
                if a & mask != 0 {
                    continue;
                }
                let off = config.vital_laws(&s, a);
                let on = config.vital_laws(&s, a | mask);
                for k in 0..4 {
                    if !scope.contains(&k) {
                        assert_eq!(off[k], on[k], "{s:?} action {a} mask {mask} vital {k}");
                    }
                }
            }
        }
    }
}

#[test]
fn optimal_value_matches_reference_line() {
    let (config, mdp) = reference_mdp();
    let sol = optimal_policy_for(&mdp, &config).unwrap();
    assert!((sol.value - 0.736).abs() <= 0.01, "value {}", sol.value);
    let uniform = evaluate_online(&mdp, &Policy::uniform(N_STATES, N_ACTIONS), &config).unwrap();
    assert!(sol.value >= uniform);
    assert!((sol.discounted_value - sol.value).abs() < 1e-8);
}

#[test]
fn unavoidable_death_is_worth_minus_one() {
    // No treatment does anything, fluctuation sends oxygen low with
    // certainty, and every initial state already has two abnormal vitals.
    let mut config = SepsisConfig::reference();
    for t in [Treatment::Antibiotics, Treatment::Vasopressors, Treatment::Ventilation] {
        let e = match t {
            Treatment::Antibiotics => &mut config.antibiotics,
            Treatment::Vasopressors => &mut config.vasopressors,
            Treatment::Ventilation => &mut config.ventilation,
        };
        *e = TreatmentEffect {
            on: VitalTables::default(),
            withdrawal: VitalTables::default(),
            suppress_on: vec![],
            suppress_withdrawal: vec![],
        };
    }
    config.fluctuation = VitalTables {
        oxygen: Some(Conditional { non_diabetic: vec![vec![1.0, 0.0]; 2], diabetic: vec![vec![1.0, 0.0]; 2] }),
        ..VitalTables::default()
    };
    config.initial.heart_rate = vec![0.5, 0.0, 0.5];
    config.initial.blood_pressure = vec![0.5, 0.0, 0.5];
    config.initial.oxygen = vec![0.0, 1.0];
    config.initial.glucose_non_diabetic = vec![0.0, 0.0, 1.0, 0.0, 0.0];
    config.initial.glucose_diabetic = vec![0.0, 0.0, 1.0, 0.0, 0.0];
    config.initial.resample_terminal = false;
    let mdp = enumerate_mdp(&config).unwrap();
    let sol = optimal_policy_for(&mdp, &config).unwrap();
    assert!((sol.value + 1.0).abs() < 1e-12, "value {}", sol.value);
}

#[test]
fn config_round_trip_and_validation() {
    let config = SepsisConfig::reference();
    let text = serde_json::to_string(&config).unwrap();
    assert_eq!(SepsisConfig::from_json(&text).unwrap(), config);
    let mut bad = config.clone();
    bad.fluctuation.heart_rate.as_mut().unwrap().diabetic[0] = vec![0.5, 0.4, 0.0];
    assert!(matches!(bad.validate(), Err(SepsisError::Config(_))));
    let mut bad = config.clone();
    bad.initial.oxygen = vec![1.0];
    assert!(bad.validate().is_err());
    let missing = SepsisConfig::load(std::path::Path::new("/nonexistent/sepsis.json"));
    assert!(matches!(missing, Err(SepsisError::Io { .. })));
}
