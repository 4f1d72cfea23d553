use super::OfflineError;
use crate::mdp::Policy;

/// Takes the action of `optimal` with probability `rho` and spreads
/// `1 − rho` evenly over the other actions.
pub fn make_behavior_policy(optimal: &Policy, rho: f64) -> Result<Policy, OfflineError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(OfflineError::Argument(format!("rho must lie in [0, 1], got {rho}")));
    }
    let na = optimal.n_actions();
    if na < 2 {
        return Err(OfflineError::Argument("a behavior policy needs at least two actions".into()));
    }
    let other = (1.0 - rho) / (na - 1) as f64;
    let table = (0..optimal.n_states())
        .map(|s| {
            let best = optimal
                .action(s)
                .ok_or_else(|| OfflineError::Argument(format!("optimal policy is not deterministic in state {s}")))?;
            Ok((0..na).map(|a| if a == best { rho } else { other }).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, OfflineError>>()?;
    Ok(Policy::from_table(table)?)
}

/// `ρ = (1 − ε) + ε/|A|` for an ε-greedy policy.
pub fn rho_from_epsilon(epsilon: f64, n_actions: usize) -> f64 {
    (1.0 - epsilon) + epsilon / n_actions as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_at_one_over_a() {
        let opt = Policy::deterministic(&[3, 0], 8).unwrap();
        let b = make_behavior_policy(&opt, 0.125).unwrap();
        assert!(b.table().iter().flatten().all(|&p| p == 0.125));
        assert_eq!(make_behavior_policy(&opt, 1.0).unwrap(), opt);
        assert!((rho_from_epsilon(0.1, 8) - 0.9125).abs() < 1e-15);
    }
}
