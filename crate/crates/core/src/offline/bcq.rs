use super::dataset::Dataset;
use crate::mdp::{argmax_lowest, Policy, QTable};

/// Visit counts `n(s, a)`.
pub fn counts_from_dataset(dataset: &Dataset, n_states: usize, n_actions: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; n_actions]; n_states];
    for r in &dataset.records {
        c[r.s][r.a] += 1.0;
    }
    c
}

/// Greedy over actions whose estimated behavior probability is at least
/// `tau` times the modal one. Unvisited states use unrestricted greedy.
pub fn bcq_filter(q: &QTable, counts: &[Vec<f64>], tau: f64) -> Policy {
    let na = q.row(0).len();
    let actions: Vec<usize> = (0..counts.len())
        .map(|s| {
            let row = q.row(s);
            let c = &counts[s];
            let top = c.iter().copied().fold(0.0, f64::max);
            if top <= 0.0 {
                return argmax_lowest(row);
            }
            let masked: Vec<f64> = row
                .iter()
                .zip(c)
                .map(|(&v, &n)| if n / top >= tau { v } else { f64::NEG_INFINITY })
                .collect();
            argmax_lowest(&masked)
        })
        .collect();
    Policy::deterministic(&actions, na).expect("argmax lies in range")
}
