//! `faqtor`: gallery verification, condition checks, bandit heatmaps and the
//! sepsis pipeline.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use faqtor_core::bandit::{self, HeatmapCell};
use faqtor_core::conditions::{check_theorem1_with_horizon, evaluate_q, AbstractionSet, DEFAULT_CONDITION_TOL, Verdict};
use faqtor_core::experiment::{run_sepsis_experiment, ExperimentManifest};
use faqtor_core::factorization::check_decomposability;
use faqtor_core::gallery;
use faqtor_core::mdp::{MdpDocument, Policy, PolicyDocument, TabularMdp};
use faqtor_core::sepsis::{self, SepsisConfig};
use faqtor_core::svg::heatmap_svg;

const CONFIG_ENV: &str = "FAQTOR_CONFIG";

const TRANSCRIPTION_HELP: &str = "\
The sepsis simulator needs a dynamics configuration in JSON.
Either omit --config (and unset FAQTOR_CONFIG) to use the bundled reference
configuration, or transcribe one by copying crates/core/data/sepsis_reference.json
and editing its vital tables, treatment effects, initial distribution and
terminal rules. Every probability row must sum to one.";

#[derive(Parser, Debug)]
#[command(name = "faqtor", version, about = "Factored-action Q-function laboratory")]
struct Cli {
    /// Base seed for stochastic subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for default output paths.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Sepsis dynamics configuration; the bundled reference when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the example gallery and print a pass/fail matrix.
    Gallery {
        /// Run a single fixture.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Also write the matrix to `<out-dir>/gallery.csv`.
        #[arg(long)]
        write_csv: bool,
    },
    /// Check the transition, reward and policy conditions for an MDP.
    Check {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        abstraction: PathBuf,
        /// Uniform over joint actions when absent.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CONDITION_TOL)]
        tol: f64,
        /// Finite evaluation horizon; required when γ = 1.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Sweep the two-dimensional bandit and emit CSV plus two SVG heatmaps.
    BanditHeatmap {
        #[arg(long, default_value_t = bandit::DEFAULT_RANGE.0, allow_negative_numbers = true)]
        alpha_min: f64,
        #[arg(long, default_value_t = bandit::DEFAULT_RANGE.1, allow_negative_numbers = true)]
        alpha_max: f64,
        #[arg(long, default_value_t = bandit::DEFAULT_RANGE.0, allow_negative_numbers = true)]
        beta_min: f64,
        #[arg(long, default_value_t = bandit::DEFAULT_RANGE.1, allow_negative_numbers = true)]
        beta_max: f64,
        #[arg(long, default_value_t = bandit::DEFAULT_STEPS)]
        steps: usize,
        /// Defaults to `<out-dir>/bandit_heatmap.csv`.
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Base path; `_rmse` and `_suboptimality` are inserted before the
        /// extension. Defaults to `<out-dir>/bandit_heatmap.svg`.
        #[arg(long)]
        out_svg: Option<PathBuf>,
    },
    /// Enumerate the sepsis simulator into a sparse MDP document.
    SepsisEnumerate {
        /// Defaults to `<out-dir>/sepsis_mdp.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Discount stored in the document; the planning discount when absent.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the offline grid experiment.
    SepsisExperiment {
        /// Manifest JSON; the default grid rooted at `--out-dir` when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Per-state decomposition residuals of an MDP under a policy.
    Decompose {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONDITION_TOL)]
        tol: f64,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

// ── Helpers ─────────────────────────────────────────────────────────────

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let doc: MdpDocument = read_json(path, "MDP")?;
    TabularMdp::from_document(doc).with_context(|| format!("invalid MDP {}", path.display()))
}

fn load_policy(path: &Path, mdp: &TabularMdp) -> Result<Policy> {
    let doc: PolicyDocument = read_json(path, "policy")?;
    let pi = Policy::from_document(doc).with_context(|| format!("invalid policy {}", path.display()))?;
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        bail!(
            "policy is {}×{}, MDP has {} states and {} actions",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        );
    }
    Ok(pi)
}

fn load_config(path: Option<&Path>) -> Result<SepsisConfig> {
    let Some(path) = path else {
        return Ok(SepsisConfig::reference());
    };
    if !path.exists() {
        bail!("sepsis configuration not found: {}\n{TRANSCRIPTION_HELP}", path.display());
    }
    SepsisConfig::load(path).map_err(|e| anyhow!("{e}\n{TRANSCRIPTION_HELP}"))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map_or("svg".into(), |e| e.to_string_lossy().into_owned());
    base.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn verdict_code(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

// ── Subcommands ─────────────────────────────────────────────────────────

pub const GALLERY_HEADER: &str = "fixture,transition,reward,policy,verdict,max_residual,status";

fn run_gallery(cli: &Cli, fixture: Option<&str>, tol: f64, write_csv: bool) -> Result<ExitCode> {
    let fixtures = match fixture {
        Some(name) => vec![gallery::find(name).ok_or_else(|| {
            let names: Vec<_> = gallery::build_gallery().iter().map(|f| f.name).collect();
            anyhow!("unknown fixture {name:?}; known: {}", names.join(", "))
        })?],
        None => gallery::build_gallery(),
    };
    let mut csv = format!("{GALLERY_HEADER}\n");
    let mut failures = Vec::new();
    for f in &fixtures {
        let outcome = f.run(tol).with_context(|| format!("fixture {}", f.name))?;
        let r = &outcome.report;
        let mark = |b: bool| if b { "holds" } else { "fails" };
        let verdict = match r.verdict {
            Verdict::Guaranteed => "guaranteed",
            Verdict::NotGuaranteed => "not-guaranteed",
        };
        let status = if outcome.passed() { "PASS" } else { "FAIL" };
        writeln!(
            csv,
            "{},{},{},{},{verdict},{:e},{status}",
            f.name,
            mark(r.transition.satisfied),
            mark(r.reward.satisfied),
            mark(r.policy.satisfied),
            r.decomposition.max_residual()
        )?;
        failures.extend(outcome.failures.iter().map(|m| format!("{}: {m}", f.name)));
    }
    print!("{csv}");
    for m in &failures {
        eprintln!("{m}");
    }
    if write_csv {
        let path = cli.out_dir.join("gallery.csv");
        write_file(&path, &csv)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(verdict_code(failures.is_empty()))
}

fn run_check(mdp: &Path, abstraction: &Path, policy: Option<&Path>, tol: f64, horizon: Option<usize>) -> Result<ExitCode> {
    let mdp = load_mdp(mdp)?;
    let phi: AbstractionSet = read_json(abstraction, "abstraction")?;
    let pi = match policy {
        Some(p) => load_policy(p, &mdp)?,
        None => Policy::uniform(mdp.n_states(), mdp.n_actions()),
    };
    let report = check_theorem1_with_horizon(&mdp, &pi, &phi, tol, horizon)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(verdict_code(report.verdict == Verdict::Guaranteed))
}

fn run_bandit_heatmap(
    cli: &Cli,
    alpha: (f64, f64),
    beta: (f64, f64),
    steps: usize,
    out_csv: Option<&Path>,
    out_svg: Option<&Path>,
) -> Result<ExitCode> {
    if steps < 2 {
        bail!("--steps must be at least 2");
    }
    if ![alpha.0, alpha.1, beta.0, beta.1].iter().all(|v| v.is_finite()) || alpha.0 >= alpha.1 || beta.0 >= beta.1 {
        bail!("ranges must be finite with min < max");
    }
    let cells = bandit::heatmap_sweep(alpha, beta, steps);
    let csv_path = out_csv.map_or_else(|| cli.out_dir.join("bandit_heatmap.csv"), Path::to_path_buf);
    write_file(&csv_path, &bandit::heatmap_csv(&cells))?;
    let svg_base = out_svg.map_or_else(|| cli.out_dir.join("bandit_heatmap.svg"), Path::to_path_buf);
    let grid = |f: fn(&HeatmapCell) -> f64| -> Vec<Vec<f64>> {
        cells.chunks(steps).map(|row| row.iter().map(f).collect()).collect()
    };
    let panels: [(&str, fn(&HeatmapCell) -> f64); 2] = [("rmse", |c| c.rmse), ("suboptimality", |c| c.suboptimality)];
    for (suffix, f) in panels {
        let path = with_suffix(&svg_base, suffix);
        write_file(&path, &heatmap_svg(&format!("{suffix} over alpha (x) and beta (y)"), &grid(f)))?;
        eprintln!("wrote {}", path.display());
    }
    eprintln!("wrote {} ({} cells)", csv_path.display(), cells.len());
    Ok(ExitCode::SUCCESS)
}

fn run_sepsis_enumerate(cli: &Cli, out: Option<&Path>, gamma: Option<f64>) -> Result<ExitCode> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(g) = gamma {
        config.evaluation.planning_gamma = g;
        config.validate()?;
    }
    let mdp = sepsis::enumerate_mdp(&config)?;
    let path = out.map_or_else(|| cli.out_dir.join("sepsis_mdp.json"), Path::to_path_buf);
    write_file(&path, &serde_json::to_string(&mdp.to_sparse_document())?)?;
    eprintln!("wrote {} ({} states, {} actions)", path.display(), mdp.n_states(), mdp.n_actions());
    Ok(ExitCode::SUCCESS)
}

fn run_experiment(cli: &Cli, manifest: Option<&Path>) -> Result<ExitCode> {
    let config = load_config(cli.config.as_deref())?;
    let mut manifest = match manifest {
        Some(p) => ExperimentManifest::load(p)?,
        None => ExperimentManifest::default_grid(cli.out_dir.clone()),
    };
    if let Some(seed) = cli.seed {
        let count = manifest.seeds.len() as u64;
        manifest.seeds = (seed..seed + count).collect();
    }
    let out = run_sepsis_experiment(&manifest, &config)?;
    println!("optimal value {:.4}", out.optimal_value);
    for s in &out.summary {
        println!(
            "rho={} n={} mode={} median={:.4} iqr=[{:.4}, {:.4}]",
            s.rho,
            s.n,
            s.mode.label(),
            s.median,
            s.q25,
            s.q75
        );
    }
    for f in &out.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run_decompose(mdp: &Path, policy: &Path, tol: f64, horizon: Option<usize>, format: Format) -> Result<ExitCode> {
    let mdp = load_mdp(mdp)?;
    let pi = load_policy(policy, &mdp)?;
    let q = evaluate_q(&mdp, &pi, horizon)?;
    let report = check_decomposability(&q, mdp.actions(), tol)?;
    match format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(verdict_code(report.decomposable))
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match &cli.command {
        Command::Gallery { fixture, tol, write_csv } => run_gallery(cli, fixture.as_deref(), *tol, *write_csv),
        Command::Check { mdp, abstraction, policy, tol, horizon } => {
            run_check(mdp, abstraction, policy.as_deref(), *tol, *horizon)
        }
        Command::BanditHeatmap { alpha_min, alpha_max, beta_min, beta_max, steps, out_csv, out_svg } => {
            run_bandit_heatmap(
                cli,
                (*alpha_min, *alpha_max),
                (*beta_min, *beta_max),
                *steps,
                out_csv.as_deref(),
                out_svg.as_deref(),
            )
        }
        Command::SepsisEnumerate { out, gamma } => run_sepsis_enumerate(cli, out.as_deref(), *gamma),
        Command::SepsisExperiment { manifest } => run_experiment(cli, manifest.as_deref()),
        Command::Decompose { mdp, policy, tol, horizon, format } => {
            run_decompose(mdp, policy, *tol, *horizon, *format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
