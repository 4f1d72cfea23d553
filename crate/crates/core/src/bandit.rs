//! Two-dimensional bandit: standardization to `[0, α, 1, 1+α+β]`, the
//! omitted-variable-bias closed form of the factored fit, and the `(α, β)`
//! sweep of approximation error and suboptimality.
//!
//! Arms are indexed `2x + y` with `x ∈ {←, →}` and `y ∈ {↓, ↑}`.

use crate::mdp::argmax_lowest;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bandit2D {
    pub rewards: [f64; 4],
}

/// Transforms applied by [`standardize`], in application order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StandardTransform {
    pub swap_y: bool,
    pub swap_x: bool,
    /// Subtracted after the swaps.
    pub shift: f64,
    /// Divides after the shift; always positive.
    pub scale: f64,
}

impl StandardTransform {
    pub fn identity() -> Self {
        Self { swap_y: false, swap_x: false, shift: 0.0, scale: 1.0 }
    }

    /// Original arm index of a standardized arm.
    pub fn original_arm(&self, arm: usize) -> usize {
        let (mut x, mut y) = (arm / 2, arm % 2);
        if self.swap_x {
            x = 1 - x;
        }
        if self.swap_y {
            y = 1 - y;
        }
        2 * x + y
    }

    pub fn apply(&self, rewards: [f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (arm, slot) in out.iter_mut().enumerate() {
            *slot = (rewards[self.original_arm(arm)] - self.shift) / self.scale;
        }
        out
    }
}

/// Which sub-action can be ignored in a degenerate bandit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IgnorableAxis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Standardized {
    Standard { alpha: f64, beta: f64, transform: StandardTransform },
    /// One sub-action never affects the reward.
    Degenerate1d(IgnorableAxis),
}

/// Reduces `[R00, R01, R10, R11]` to `[0, α, 1, 1+α+β]` by an optional
/// up/down swap, an optional left/right swap, a shift and a positive scale.
pub fn standardize(rewards: [f64; 4]) -> Standardized {
    let [r00, r01, r10, r11] = rewards;
    if r00 == r10 && r01 == r11 {
        return Standardized::Degenerate1d(IgnorableAxis::X);
    }
    if r00 == r01 && r10 == r11 {
        return Standardized::Degenerate1d(IgnorableAxis::Y);
    }
    let mut t = StandardTransform::identity();
    if r00 == r10 {
        t.swap_y = true;
    }
    let r = t.apply(rewards);
    if r[0] > r[2] {
        t.swap_x = true;
    }
    let r = t.apply(rewards);
    t.shift = r[0];
    t.scale = r[2] - r[0];
    let r = t.apply(rewards);
    let alpha = r[1];
    let beta = r[3] - r[2] - r[1];
    Standardized::Standard { alpha, beta, transform: t }
}

pub fn q_star(alpha: f64, beta: f64) -> [f64; 4] {
    [0.0, alpha, 1.0, 1.0 + alpha + beta]
}

/// Factored least-squares fit of [`q_star`]: `[−β/4, α+β/4, 1+β/4, 1+α+3β/4]`.
pub fn ovb_qhat(alpha: f64, beta: f64) -> [f64; 4] {
    let b = beta / 4.0;
    [-b, alpha + b, 1.0 + b, 1.0 + alpha + 3.0 * b]
}

pub fn rmse(q_true: &[f64], q_hat: &[f64]) -> f64 {
    let n = q_true.len() as f64;
    (q_true.iter().zip(q_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

/// `max_a Q*(a) − Q*(argmax_a Q̂(a))`, lowest-index ties.
pub fn suboptimality(q_true: &[f64], q_hat: &[f64]) -> f64 {
    let best = q_true.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best - q_true[argmax_lowest(q_hat)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub alpha: f64,
    pub beta: f64,
    pub rmse: f64,
    pub suboptimality: f64,
}

/// `lo + (hi − lo)·i/(steps − 1)`; exact at both ends and at the midpoint of
/// symmetric ranges with an odd step count.
pub fn grid_axis(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

pub const DEFAULT_RANGE: (f64, f64) = (-4.0, 4.0);
pub const DEFAULT_STEPS: usize = 161;

/// Row-major over β (outer) then α (inner).
pub fn heatmap_sweep(alpha_range: (f64, f64), beta_range: (f64, f64), steps: usize) -> Vec<HeatmapCell> {
    assert!(steps >= 2, "a sweep needs at least two points per axis");
    let alphas = grid_axis(alpha_range.0, alpha_range.1, steps);
    let betas = grid_axis(beta_range.0, beta_range.1, steps);
    betas
        .par_iter()
        .flat_map_iter(|&beta| {
            alphas.iter().map(move |&alpha| {
                let qs = q_star(alpha, beta);
                let qh = ovb_qhat(alpha, beta);
                HeatmapCell { alpha, beta, rmse: rmse(&qs, &qh), suboptimality: suboptimality(&qs, &qh) }
            })
        })
        .collect()
}

pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("alpha,beta,rmse,suboptimality\n");
    for c in cells {
        out.push_str(&format!("{},{},{},{}\n", c.alpha, c.beta, c.rmse, c.suboptimality));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_examples() {
        match standardize([0.0, 1.0, 1.0, 2.0]) {
            Standardized::Standard { alpha, beta, transform } => {
                assert_eq!((alpha, beta), (1.0, 0.0));
                assert_eq!(transform, StandardTransform::identity());
            }
            other => panic!("{other:?}"),
        }
        match standardize([5.0, 5.0, 7.0, 9.0]) {
            Standardized::Standard { alpha, beta, transform } => {
                assert_eq!((alpha, beta), (0.0, 1.0));
                assert_eq!((transform.shift, transform.scale), (5.0, 2.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(standardize([1.0, 1.0, 0.0, 0.0]), Standardized::Degenerate1d(IgnorableAxis::Y));
        assert_eq!(standardize([1.0, 2.0, 1.0, 2.0]), Standardized::Degenerate1d(IgnorableAxis::X));
    }

    #[test]
    fn swap_branches() {
        // R00 == R10 forces the up/down swap; R00 > R10 afterwards forces left/right.
        match standardize([3.0, 2.0, 3.0, 0.0]) {
            Standardized::Standard { alpha, beta, transform } => {
                assert!(transform.swap_y && transform.swap_x);
                assert_eq!(transform.apply([3.0, 2.0, 3.0, 0.0]), q_star(alpha, beta));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(ovb_qhat(1.0, 1.0), [-0.25, 1.25, 1.25, 2.75]);
        assert_eq!(ovb_qhat(1.0, -3.0), [0.75, 0.25, 0.25, -0.25]);
        assert_eq!(ovb_qhat(2.5, 0.0), q_star(2.5, 0.0));
        // Every arm is off by ±β/4.
        assert_eq!(rmse(&q_star(1.0, 1.0), &ovb_qhat(1.0, 1.0)), 0.25);
        assert_eq!(suboptimality(&q_star(1.0, -3.0), &ovb_qhat(1.0, -3.0)), 1.0);
    }

    #[test]
    fn grid_hits_zero() {
        let g = grid_axis(-4.0, 4.0, 161);
        assert_eq!(g[80], 0.0);
        assert_eq!(g[100], 1.0);
        assert_eq!(g[60], -1.0);
    }
}
