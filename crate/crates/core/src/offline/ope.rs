use super::dataset::Dataset;
use super::OfflineError;
use crate::mdp::Policy;

/// Per-episode importance weights `∏_t π(a_t|s_t)/β(a_t|s_t)` in episode order.
pub fn episode_weights(dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<Vec<f64>, OfflineError> {
    dataset
        .episodes()
        .into_iter()
        .map(|ep| {
            ep.iter().try_fold(1.0, |w, r| {
                let b = behavior.prob(r.s, r.a);
                if b <= 0.0 {
                    return Err(OfflineError::SupportViolation { episode: r.episode, t: r.t, state: r.s, action: r.a });
                }
                Ok(w * target.prob(r.s, r.a) / b)
            })
        })
        .collect()
}

/// Weighted importance sampling: `Σ w_i G_i / Σ w_i` with `G_i` the
/// `gamma`-discounted return of episode `i`.
pub fn wis_estimate(dataset: &Dataset, target: &Policy, behavior: &Policy, gamma: f64) -> Result<f64, OfflineError> {
    let weights = episode_weights(dataset, target, behavior)?;
    let returns: Vec<f64> = dataset
        .episodes()
        .into_iter()
        .map(|ep| ep.iter().rev().fold(0.0, |g, r| r.r + gamma * g))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(OfflineError::Argument("target policy gives zero weight to every episode".into()));
    }
    Ok(weights.iter().zip(&returns).map(|(w, g)| w * g).sum::<f64>() / total)
}

/// `(Σw)² / Σw²`.
pub fn ess(weights: &[f64]) -> Result<f64, OfflineError> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(OfflineError::Argument("weights must be finite and nonnegative".into()));
    }
    let s: f64 = weights.iter().sum();
    if s == 0.0 {
        return Err(OfflineError::Argument("all weights are zero".into()));
    }
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    Ok(s * s / s2)
}
