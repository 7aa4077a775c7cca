//! Command-line front-end: `params`, `optimize`, `simulate`, and
//! `asymptotics` subcommands over a shared experiment configuration.
//!
//! Every command is a pure function of (flags, config file, seed); outputs
//! carry no timestamps, so reruns are byte-identical. Flags override config
//! file values, and the effective configuration is echoed into every output
//! file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};
use crate::sim;
use crate::stats;

/// Exit code for a simulation that blew its error budgets.
pub const EXIT_GUARANTEE_FAILED: i32 = 1;
/// Exit code for invalid parameters, infeasible designs, or I/O failures.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub k: u64,
    pub n: u64,
    pub eps1: f64,
    pub eps2: f64,
    pub p: Option<f64>,
    pub adaptive: bool,
    pub finetune: bool,
    pub runs: u64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub emit_trajectories: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::traditional(),
            k: 10,
            n: 1000,
            eps1: 0.01,
            eps2: 0.01,
            p: None,
            adaptive: false,
            finetune: false,
            runs: 1000,
            seed: 42,
            threads: None,
            out: None,
            emit_trajectories: None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "grouptest",
    about = "Score-based group testing: design parameters, density optimization, and Monte Carlo validation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the design parameters (p, T, Z) and score moments for a model.
    Params(CommonOpts),
    /// Minimize the code length T over the inclusion probability p.
    Optimize(CommonOpts),
    /// Monte Carlo estimate of the false-positive/false-negative event
    /// rates; exit code 1 if a Wilson upper bound exceeds twice its budget.
    Simulate(SimulateOpts),
    /// Print the large-K leading term of the code length.
    Asymptotics(CommonOpts),
}

#[derive(Debug, Args)]
struct CommonOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Outcome model: traditional|dilution|additive|majority|bernoulli|linear|unknown.
    #[arg(long)]
    model: Option<String>,
    /// Number of defectives K.
    #[arg(long)]
    k: Option<u64>,
    /// Number of items N.
    #[arg(long)]
    n: Option<u64>,
    /// False-positive event budget.
    #[arg(long)]
    eps1: Option<f64>,
    /// False-negative event budget.
    #[arg(long)]
    eps2: Option<f64>,
    /// Inclusion probability; omit to optimize it.
    #[arg(long)]
    p: Option<f64>,
    /// Noise parameter (dilution/additive).
    #[arg(long)]
    r: Option<f64>,
    /// Gap outcome probability (bernoulli).
    #[arg(long)]
    q: Option<f64>,
    /// Sequential design: accuse as soon as a running score crosses Z.
    #[arg(long)]
    adaptive: bool,
    /// Certain-exclusion scoring (sound for traditional/additive only).
    #[arg(long)]
    finetune: bool,
    /// Master seed for all randomized work.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap; defaults to available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Number of seeded Monte Carlo runs.
    #[arg(long)]
    runs: Option<u64>,
    /// Output directory for report.json and runs.csv (must exist).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the first run's per-test running scores as CSV.
    #[arg(long, value_name = "PATH")]
    emit_trajectories: Option<PathBuf>,
}

impl CommonOpts {
    fn merge(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(kind) = &self.model {
            cfg.model.kind = kind.parse::<ModelKind>()?;
        }
        if let Some(r) = self.r {
            cfg.model.r = r;
        }
        if let Some(q) = self.q {
            cfg.model.q = q;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(e) = self.eps1 {
            cfg.eps1 = e;
        }
        if let Some(e) = self.eps2 {
            cfg.eps2 = e;
        }
        if let Some(p) = self.p {
            cfg.p = Some(p);
        }
        if self.adaptive {
            cfg.adaptive = true;
        }
        if self.finetune {
            cfg.finetune = true;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        Ok(cfg)
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

/// `params`: design parameters plus the moment summary for one model.
pub fn cmd_params(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let (design, m) = sim::build_design(
        &cfg.model, cfg.k, cfg.n, cfg.eps1, cfg.eps2, cfg.p, cfg.adaptive, cfg.finetune, cfg.seed,
    )?;
    let eta = stats::eta(cfg.n, cfg.k, cfg.eps1, cfg.eps2.min(cfg.k as f64), cfg.adaptive)?;
    let asymptotic = stats::asymptotic_code_length(&cfg.model, cfg.k, cfg.n, cfg.finetune)?;
    Ok(json!({
        "config": cfg,
        "design": design,
        "moments": m,
        "eta": eta,
        "asymptotic_t": asymptotic,
    }))
}

/// `optimize`: the density minimizing T, with the resulting (T, Z).
pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    if cfg.p.is_some() {
        return Err(Error::InvalidParameter(
            "optimize and an explicit p are mutually exclusive".into(),
        ));
    }
    let (p_star, t_unrounded) =
        sim::optimize_p(&cfg.model, cfg.k, cfg.n, cfg.eps1, cfg.eps2, cfg.adaptive)?;
    let (design, _) = sim::build_design(
        &cfg.model,
        cfg.k,
        cfg.n,
        cfg.eps1,
        cfg.eps2,
        Some(p_star),
        cfg.adaptive,
        cfg.finetune,
        cfg.seed,
    )?;
    Ok(json!({
        "config": cfg,
        "p_star": p_star,
        "t_star": design.t,
        "z_star": design.z,
        "t_unrounded": t_unrounded,
    }))
}

/// `asymptotics`: the large-K leading term of T for this model.
pub fn cmd_asymptotics(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let asymptotic = stats::asymptotic_code_length(&cfg.model, cfg.k, cfg.n, cfg.finetune)?;
    Ok(json!({
        "config": cfg,
        "asymptotic_t": asymptotic,
    }))
}

/// `simulate`: writes report.json and runs.csv into the output directory and
/// reports whether the empirical rates honor twice the budgets.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(serde_json::Value, bool)> {
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    if !out_dir.is_dir() {
        return Err(Error::InvalidParameter(format!(
            "output directory {} does not exist",
            out_dir.display()
        )));
    }
    let (design, _) = sim::build_design(
        &cfg.model, cfg.k, cfg.n, cfg.eps1, cfg.eps2, cfg.p, cfg.adaptive, cfg.finetune, cfg.seed,
    )?;
    let report = with_pool(cfg.threads, || sim::simulate(&design, cfg.runs, cfg.seed))?;
    let pass = report.within_budgets(cfg.eps1, cfg.eps2, 2.0);

    let config_json = serde_json::to_string(cfg)?;
    let payload = json!({
        "config": cfg,
        "design": design,
        "report": report,
        "guarantee_pass": pass,
    });
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&payload)?)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv, Some(&format!("config {config_json}")))?;
    fs::write(out_dir.join("runs.csv"), csv)?;

    if let Some(path) = &cfg.emit_trajectories {
        write_first_run_trajectories(&design, cfg.seed, &config_json, path)?;
    }

    let summary = json!({
        "config": cfg,
        "t": design.t,
        "z": design.z,
        "fp_event_rate": report.fp_event_rate,
        "fn_event_rate": report.fn_event_rate,
        "wilson_ci_fp": report.wilson_ci_fp,
        "wilson_ci_fn": report.wilson_ci_fn,
        "guarantee_pass": pass,
    });
    Ok((summary, pass))
}

fn write_first_run_trajectories(
    design: &stats::DesignParams,
    master_seed: u64,
    config_json: &str,
    path: &Path,
) -> Result<()> {
    let tables = crate::design::build_per_test_tables(design)?;
    let opts = crate::design::AdaptiveOptions { record_trajectories: true, ..Default::default() };
    let seed = sim::derive_run_seed(master_seed, 0);
    let out = sim::run_once(design, tables.as_deref(), seed, Some(&opts))?;

    let mut buf = Vec::new();
    use std::io::Write as _;
    writeln!(buf, "# config {config_json}")?;
    sim::write_trajectories_csv(&mut buf, 0, &out.result, &out.defectives, true)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Parses argv, dispatches, prints the JSON result, and returns the process
/// exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path with code 0.
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok((value, code)) => {
            println!("{}", serde_json::to_string_pretty(&value).unwrap());
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: Cli) -> Result<(serde_json::Value, i32)> {
    match cli.command {
        Command::Params(opts) => {
            let cfg = opts.merge()?;
            Ok((cmd_params(&cfg)?, 0))
        }
        Command::Optimize(opts) => {
            let cfg = opts.merge()?;
            Ok((cmd_optimize(&cfg)?, 0))
        }
        Command::Asymptotics(opts) => {
            let cfg = opts.merge()?;
            Ok((cmd_asymptotics(&cfg)?, 0))
        }
        Command::Simulate(opts) => {
            let mut cfg = opts.common.merge()?;
            if let Some(runs) = opts.runs {
                cfg.runs = runs;
            }
            if let Some(out) = opts.out {
                cfg.out = Some(out);
            }
            if let Some(path) = opts.emit_trajectories {
                cfg.emit_trajectories = Some(path);
            }
            let (value, pass) = cmd_simulate(&cfg)?;
            Ok((value, if pass { 0 } else { EXIT_GUARANTEE_FAILED }))
        }
    }
}
