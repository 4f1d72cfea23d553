//! Sepsis grid experiment: for every `(seed, ρ, n)` log `n` episodes under
//! the ρ-behavior policy, run FQI once per featurization mode on the same
//! data, and score every iteration's greedy policy exactly on the enumerated
//! model.
//!
//! Outputs in `out_dir`:
//! - `results.csv`: `seed,rho,n,mode,value,best_iteration,final_value`
//! - `summary.csv`: median and quartiles per `(rho, n, mode)` plus the
//!   optimal-value reference line
//! - `fqi_curves.csv`: `seed,rho,n,mode,iteration,online_value`
//! - `manifest.json`: the manifest that produced them
//!
//! `value` is the best value over iterations (selection on ground truth);
//! `final_value` is the value after the last iteration.

use crate::mdp::{MdpError, Policy, TabularMdp};
use crate::offline::{
    fqi, generate_dataset, make_behavior_policy, rho_from_epsilon, ActionFeatures, FqiConfig, OfflineError,
    SepsisEnv, StateFeatures,
};
use crate::sepsis::{self, enumerate_mdp, evaluate_online, optimal_policy_for, SepsisConfig, SepsisError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Optimal value printed alongside the sepsis results.
pub const PUBLISHED_OPTIMAL_VALUE: f64 = 0.736;

pub const RESULTS_HEADER: &str = "seed,rho,n,mode,value,best_iteration,final_value";
pub const SUMMARY_HEADER: &str =
    "rho,n,mode,runs,median,q25,q75,median_final,q25_final,q75_final,optimal_value,reference_value";
pub const CURVES_HEADER: &str = "seed,rho,n,mode,iteration,online_value";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Offline(#[from] OfflineError),
    #[error(transparent)]
    Sepsis(#[from] SepsisError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StateFeatureKind {
    /// 21-bit one-hot blocks.
    #[default]
    Compact,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqiSettings {
    pub iterations: usize,
    pub ridge: f64,
    pub clip: (f64, f64),
    pub gamma: f64,
    pub state_features: StateFeatureKind,
}

impl Default for FqiSettings {
    fn default() -> Self {
        let d = FqiConfig::default();
        Self {
            iterations: d.iterations,
            ridge: d.ridge,
            clip: d.clip,
            gamma: d.gamma,
            state_features: StateFeatureKind::Compact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub id: String,
    pub seeds: Vec<u64>,
    pub rhos: Vec<f64>,
    /// Episodes per dataset.
    pub sample_sizes: Vec<usize>,
    pub modes: Vec<ActionFeatures>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub fqi: FqiSettings,
}

impl ExperimentManifest {
    /// ρ ∈ {0, 0.05, 1/8, ε-greedy at ε = 0.5 and 0.1}, n ∈ {100, 1000,
    /// 5000, 10000}, ten seeds, both modes.
    pub fn default_grid(out_dir: PathBuf) -> Self {
        Self {
            id: "sepsis-default".into(),
            seeds: (0..10).collect(),
            rhos: vec![0.0, 0.05, 0.125, rho_from_epsilon(0.5, 8), rho_from_epsilon(0.1, 8)],
            sample_sizes: vec![100, 1000, 5000, 10000],
            modes: vec![ActionFeatures::Baseline, ActionFeatures::Factored],
            out_dir,
            fqi: FqiSettings::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Io { path: path.display().to_string(), source: e })?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Manifest(m.into()));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if self.rhos.is_empty() || self.sample_sizes.is_empty() || self.modes.is_empty() {
            return bad("rhos, sample_sizes and modes must be nonempty");
        }
        if self.rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("every rho must lie in [0, 1]");
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be positive");
        }
        self.fqi_config(ActionFeatures::Factored).validate()?;
        Ok(())
    }

    pub fn fqi_config(&self, mode: ActionFeatures) -> FqiConfig {
        FqiConfig {
            mode,
            iterations: self.fqi.iterations,
            ridge: self.fqi.ridge,
            clip: self.fqi.clip,
            gamma: self.fqi.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub seed: u64,
    pub rho: f64,
    pub n: usize,
    pub mode: ActionFeatures,
    pub value: f64,
    /// 1-based.
    pub best_iteration: usize,
    pub final_value: f64,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub rho: f64,
    pub n: usize,
    pub mode: ActionFeatures,
    pub runs: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub median_final: f64,
    pub q25_final: f64,
    pub q75_final: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    /// Value of the optimal policy under the scoring protocol.
    pub optimal_value: f64,
    pub files: Vec<PathBuf>,
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, usize, ActionFeatures)> = Vec::new();
    for r in rows {
        let k = (r.rho, r.n, r.mode);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(rho, n, mode)| {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.rho == rho && r.n == n && r.mode == mode).collect();
            let mut best: Vec<f64> = sel.iter().map(|r| r.value).collect();
            let mut fin: Vec<f64> = sel.iter().map(|r| r.final_value).collect();
            best.sort_by(f64::total_cmp);
            fin.sort_by(f64::total_cmp);
            SummaryRow {
                rho,
                n,
                mode,
                runs: sel.len(),
                median: quantile(&best, 0.5),
                q25: quantile(&best, 0.25),
                q75: quantile(&best, 0.75),
                median_final: quantile(&fin, 0.5),
                q25_final: quantile(&fin, 0.25),
                q75_final: quantile(&fin, 0.75),
            }
        })
        .collect()
}

/// Median best-iteration value for one grid cell.
pub fn median_value(summary: &[SummaryRow], rho: f64, n: usize, mode: ActionFeatures) -> Option<f64> {
    summary.iter().find(|r| r.rho == rho && r.n == n && r.mode == mode).map(|r| r.median)
}

struct Scorer<'a> {
    mdp: &'a TabularMdp,
    config: &'a SepsisConfig,
    cache: HashMap<Vec<usize>, f64>,
}

impl Scorer<'_> {
    fn score(&mut self, policy: &Policy) -> Result<f64, MdpError> {
        let key: Vec<usize> = (0..policy.n_states()).map(|s| policy.action(s).expect("greedy policy")).collect();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = evaluate_online(self.mdp, policy, self.config)?;
        self.cache.insert(key, v);
        Ok(v)
    }
}

fn run_cell(
    manifest: &ExperimentManifest,
    config: &SepsisConfig,
    mdp: &TabularMdp,
    optimal: &Policy,
    features: &StateFeatures,
    (seed, rho, n): (u64, f64, usize),
) -> Result<Vec<ResultRow>, ExperimentError> {
    let behavior = make_behavior_policy(optimal, rho)?;
    let env = SepsisEnv { config };
    let data = generate_dataset(&env, &behavior, n, config.evaluation.episode_length, seed, Some(rho))?;
    let space = sepsis::action_space();
    let mut scorer = Scorer { mdp, config, cache: HashMap::new() };
    manifest
        .modes
        .iter()
        .map(|&mode| {
            let result = fqi(&data, &space, features, &manifest.fqi_config(mode))?;
            let curve = result
                .iterations
                .iter()
                .map(|it| scorer.score(&it.policy))
                .collect::<Result<Vec<f64>, _>>()?;
            let (best_idx, best) = curve
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            Ok(ResultRow {
                seed,
                rho,
                n,
                mode,
                value: best,
                best_iteration: best_idx + 1,
                final_value: *curve.last().expect("at least one iteration"),
                curve,
            })
        })
        .collect()
}

/// Runs the grid in memory; arms run in parallel and come back in
/// seed-major, then ρ, then n, then mode order.
pub fn run_grid(manifest: &ExperimentManifest, config: &SepsisConfig) -> Result<(Vec<ResultRow>, f64), ExperimentError> {
    manifest.validate()?;
    let mdp = enumerate_mdp(config)?;
    let opt = optimal_policy_for(&mdp.with_gamma(config.evaluation.planning_gamma)?, config)?;
    let features = match manifest.fqi.state_features {
        StateFeatureKind::Compact => StateFeatures::Matrix(sepsis::feature_matrix()),
        StateFeatureKind::Tabular => StateFeatures::Tabular { n_states: sepsis::N_STATES },
    };
    let mut cells = Vec::new();
    for &seed in &manifest.seeds {
        for &rho in &manifest.rhos {
            for &n in &manifest.sample_sizes {
                cells.push((seed, rho, n));
            }
        }
    }
    let nested = cells
        .into_par_iter()
        .map(|cell| run_cell(manifest, config, &mdp, &opt.policy, &features, cell))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((nested.into_iter().flatten().collect(), opt.value))
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed,
            r.rho,
            r.n,
            r.mode.label(),
            r.value,
            r.best_iteration,
            r.final_value
        ));
    }
    out
}

pub fn curves_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in rows {
        for (i, v) in r.curve.iter().enumerate() {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.seed, r.rho, r.n, r.mode.label(), i + 1, v));
        }
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow], optimal_value: f64) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.rho,
            s.n,
            s.mode.label(),
            s.runs,
            s.median,
            s.q25,
            s.q75,
            s.median_final,
            s.q25_final,
            s.q75_final,
            optimal_value,
            PUBLISHED_OPTIMAL_VALUE
        ));
    }
    out
}

/// Runs the grid and writes the four output files.
pub fn run_sepsis_experiment(
    manifest: &ExperimentManifest,
    config: &SepsisConfig,
) -> Result<ExperimentOutput, ExperimentError> {
    let (rows, optimal_value) = run_grid(manifest, config)?;
    let summary = summarize(&rows);
    let dir = &manifest.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io { path: dir.display().to_string(), source: e })?;
    let files = [
        ("results.csv", results_csv(&rows)),
        ("summary.csv", summary_csv(&summary, optimal_value)),
        ("fqi_curves.csv", curves_csv(&rows)),
        ("manifest.json", serde_json::to_string_pretty(manifest)? + "\n"),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| ExperimentError::Io { path: p.display().to_string(), source: e })?;
        paths.push(p);
    }
    Ok(ExperimentOutput { rows, summary, optimal_value, files: paths })
}
