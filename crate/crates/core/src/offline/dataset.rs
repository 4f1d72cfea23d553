//! Logged episodes. Episode `e` of a dataset with seed `seed` draws from its
//! own `Pcg64` stream seeded with `splitmix64(seed) ⊕ e`, so datasets are
//! reproducible regardless of how episodes are scheduled across threads.

use super::OfflineError;
use crate::mdp::{Policy, TabularMdp};
use crate::sepsis::{self, SepsisConfig, SepsisState, DEATH, DISCHARGE};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CSV_HEADER: &str = "episode,t,s,a,r,s_next,done";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub episode: usize,
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub environment: String,
    pub n_episodes: usize,
    pub max_len: usize,
    /// Probability of the optimal action, when the behavior was built that way.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Transition>,
    pub seed: u64,
    pub spec: DatasetSpec,
}

/// JSON sidecar written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    spec: DatasetSpec,
    n_records: usize,
}

// ── Environments ────────────────────────────────────────────────────────

/// Episodic sampler over integer states and joint actions.
pub trait Environment: Sync {
    fn name(&self) -> String;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&self, rng: &mut Pcg64) -> usize;
    /// `(reward, next_state, done)`.
    fn step(&self, s: usize, a: usize, rng: &mut Pcg64) -> (f64, usize, bool);
}

/// A tabular MDP sampled row by row. `done` is raised on entering a state
/// where every action self-loops with probability 1 and reward 0.
pub struct TabularEnv<'a> {
    mdp: &'a TabularMdp,
    terminal: Vec<bool>,
}

impl<'a> TabularEnv<'a> {
    pub fn new(mdp: &'a TabularMdp) -> Self {
        let terminal = (0..mdp.n_states())
            .map(|s| (0..mdp.n_actions()).all(|a| mdp.reward(s, a) == 0.0 && mdp.row(s, a) == [(s, 1.0)]))
            .collect();
        Self { mdp, terminal }
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }
}

fn sample_sparse(row: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(j, p) in row {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.last().expect("rows are nonempty").0
}

impl Environment for TabularEnv<'_> {
    fn name(&self) -> String {
        format!("tabular({} states, {} actions)", self.mdp.n_states(), self.mdp.n_actions())
    }

    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset(&self, rng: &mut Pcg64) -> usize {
        sepsis::sample_categorical(self.mdp.initial_dist(), rng.gen::<f64>())
    }

    fn step(&self, s: usize, a: usize, rng: &mut Pcg64) -> (f64, usize, bool) {
        let next = sample_sparse(self.mdp.row(s, a), rng.gen::<f64>());
        (self.mdp.reward(s, a), next, self.terminal[next])
    }
}

/// The sepsis simulator over the enumerated index space; terminal steps
/// report [`DEATH`] or [`DISCHARGE`] as the next state.
pub struct SepsisEnv<'a> {
    pub config: &'a SepsisConfig,
}

impl Environment for SepsisEnv<'_> {
    fn name(&self) -> String {
        "sepsis".into()
    }

    fn n_states(&self) -> usize {
        sepsis::N_STATES
    }

    fn n_actions(&self) -> usize {
        sepsis::N_ACTIONS
    }

    fn reset(&self, rng: &mut Pcg64) -> usize {
        sepsis::sample_initial(rng, self.config).index()
    }

    fn step(&self, s: usize, a: usize, rng: &mut Pcg64) -> (f64, usize, bool) {
        let Some(state) = SepsisState::from_index(s) else {
            return (0.0, s, true);
        };
        let out = sepsis::step(&state, a, rng, self.config);
        if !out.done {
            return (out.reward, out.next.index(), false);
        }
        let absorbing = if self.config.abnormal_count(&out.next) >= self.config.terminal.death_abnormal {
            DEATH
        } else {
            DISCHARGE
        };
        (out.reward, absorbing, true)
    }
}

// ── Generation ──────────────────────────────────────────────────────────

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn episode_rng(seed: u64, episode: usize) -> Pcg64 {
    Pcg64::seed_from_u64(splitmix64(seed) ^ episode as u64)
}

/// Rolls out `n_episodes` episodes of at most `max_len` steps. An episode
/// cut by `max_len` ends on a record with `done = false`.
pub fn generate_dataset(
    env: &dyn Environment,
    behavior: &Policy,
    n_episodes: usize,
    max_len: usize,
    seed: u64,
    rho: Option<f64>,
) -> Result<Dataset, OfflineError> {
    if n_episodes == 0 || max_len == 0 {
        return Err(OfflineError::Argument("need at least one episode of at least one step".into()));
    }
    if behavior.n_states() != env.n_states() || behavior.n_actions() != env.n_actions() {
        return Err(OfflineError::Argument(format!(
            "behavior policy is {}x{}, environment is {}x{}",
            behavior.n_states(),
            behavior.n_actions(),
            env.n_states(),
            env.n_actions()
        )));
    }
    let episodes: Vec<Vec<Transition>> = (0..n_episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = episode_rng(seed, e);
            let mut s = env.reset(&mut rng);
            let mut out = Vec::new();
            for t in 0..max_len {
                let a = sepsis::sample_categorical(behavior.row(s), rng.gen::<f64>());
                let (r, s_next, done) = env.step(s, a, &mut rng);
                out.push(Transition { episode: e, t, s, a, r, s_next, done });
                if done {
                    break;
                }
                s = s_next;
            }
            out
        })
        .collect();
    Ok(Dataset {
        records: episodes.into_iter().flatten().collect(),
        seed,
        spec: DatasetSpec { environment: env.name(), n_episodes, max_len, rho },
    })
}

// ── Serialization ───────────────────────────────────────────────────────

impl Dataset {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 24 + 32);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{},{},{}\n", r.episode, r.t, r.s, r.a, r.r, r.s_next, r.done as u8));
        }
        out
    }

    /// Writes `path` and a JSON sidecar at `path` with extension `json`.
    pub fn write(&self, path: &Path) -> Result<(), OfflineError> {
        let io = |e| OfflineError::Io { path: path.display().to_string(), source: e };
        std::fs::write(path, self.to_csv()).map_err(io)?;
        let side = Sidecar { seed: self.seed, spec: self.spec.clone(), n_records: self.records.len() };
        let side_path = path.with_extension("json");
        std::fs::write(&side_path, serde_json::to_string_pretty(&side)?)
            .map_err(|e| OfflineError::Io { path: side_path.display().to_string(), source: e })?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, OfflineError> {
        let side_path = path.with_extension("json");
        let text = std::fs::read_to_string(&side_path)
            .map_err(|e| OfflineError::Io { path: side_path.display().to_string(), source: e })?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != CSV_HEADER {
            return Err(OfflineError::Dataset(format!("unexpected header {:?}", header.join(","))));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            let field = |i: usize| -> Result<&str, OfflineError> {
                row.get(i).ok_or_else(|| OfflineError::Dataset(format!("short row {row:?}")))
            };
            let int = |i: usize| -> Result<usize, OfflineError> {
                field(i)?.parse().map_err(|_| OfflineError::Dataset(format!("bad integer in {row:?}")))
            };
            records.push(Transition {
                episode: int(0)?,
                t: int(1)?,
                s: int(2)?,
                a: int(3)?,
                r: field(4)?.parse().map_err(|_| OfflineError::Dataset(format!("bad reward in {row:?}")))?,
                s_next: int(5)?,
                done: int(6)? == 1,
            });
        }
        if records.len() != side.n_records {
            return Err(OfflineError::Dataset(format!(
                "sidecar lists {} records, CSV has {}",
                side.n_records,
                records.len()
            )));
        }
        Ok(Self { records, seed: side.seed, spec: side.spec })
    }

    /// Consecutive record slices sharing an episode id.
    pub fn episodes(&self) -> Vec<&[Transition]> {
        self.records.chunk_by(|a, b| a.episode == b.episode).collect()
    }

    /// Checks `t` runs 0, 1, 2, … within each episode and only the last record may be done.
    pub fn validate(&self) -> Result<(), OfflineError> {
        for ep in self.episodes() {
            for (k, r) in ep.iter().enumerate() {
                if r.t != k {
                    return Err(OfflineError::Dataset(format!("episode {} has t = {} at position {k}", r.episode, r.t)));
                }
                if r.done && k + 1 != ep.len() {
                    return Err(OfflineError::Dataset(format!("episode {} continues after done", r.episode)));
                }
            }
            if ep.len() > self.spec.max_len {
                return Err(OfflineError::Dataset(format!("episode {} exceeds max_len", ep[0].episode)));
            }
        }
        Ok(())
    }
}
