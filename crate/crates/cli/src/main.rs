//! `greenwave` command line: validate configs, run single scenarios,
//! probe capacity frontiers, and compare control policies, with every
//! result emitted as plain CSV/JSON files for whatever plots the data.
//!
//! Exit codes: 0 success; 1 when the inputs are wrong (flags, config,
//! sweep spec); 2 when the run or the result emission fails. All errors
//! leave one JSON object on stderr (`{"error":{"kind":…,"message":…}}`)
//! so wrapping scripts never have to scrape prose.
//!
//! Environment: `GREENWAVE_OUT` sets the default output directory
//! (a `--out` flag still wins) and `GREENWAVE_THREADS` pins the worker
//! count, where 1 selects the sequential backend outright. Output bytes
//! are identical for a fixed config and seed regardless of either.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use greenwave_core::config::PolicyKind;
use greenwave_core::metrics::{decisions_csv, plot_data};
use greenwave_core::scenario::{
    capacity_sweep, compare_policies, run_scenario, RunOptions, SweepRay, SweepSpec,
};
use greenwave_core::stability::StabilityThresholds;
use greenwave_core::{
    build_network, BuildError, ConfigDocument, NetworkGraph, NetworkState, Parallelism, SimError,
};

#[derive(Parser)]
#[command(
    name = "greenwave",
    version,
    about = "Macroscopic traffic network simulator with decentralized signal control",
    after_help = "Environment:\n  GREENWAVE_OUT      default output directory (--out overrides)\n  GREENWAVE_THREADS  worker threads; 1 forces the sequential backend"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config without running or writing anything.
    Validate {
        /// Network config (TOML).
        config: PathBuf,
    },
    /// Run one scenario and write metrics.csv/.json, stability.json and
    /// plot.csv (plus decisions.csv when auditing) to the output directory.
    Simulate {
        /// Network config (TOML).
        config: PathBuf,
        /// Control policy override: ft, bp, cabp or pwbp (default: the
        /// config's `[controller] policy`).
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Master random seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Horizon override (s).
        #[arg(long)]
        horizon: Option<f64>,
        /// Step override (s); rejected if it breaks the CFL bound.
        #[arg(long)]
        dt: Option<f64>,
        /// Record every phase decision to decisions.csv.
        #[arg(long)]
        audit: bool,
        /// Output directory (default: $GREENWAVE_OUT, else `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bisect the stable demand scale along each ray of a sweep spec and
    /// write frontier.csv/.json plus every probed point to points.csv.
    Sweep {
        /// Network config (TOML).
        config: PathBuf,
        /// Sweep spec (TOML): rays, tolerance, horizon, replications.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory (default: $GREENWAVE_OUT, else `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several policies on the same network and seed and write
    /// comparison.csv/.json and a combined plot.csv.
    Compare {
        /// Network config (TOML).
        config: PathBuf,
        /// Comma-separated policies to run (default: all four).
        #[arg(long, value_delimiter = ',', default_values_t = [
            PolicyKind::FixedTime, PolicyKind::Bp, PolicyKind::Cabp, PolicyKind::Pwbp,
        ])]
        policies: Vec<PolicyKind>,
        /// Master random seed (same for every policy).
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Horizon override (s).
        #[arg(long)]
        horizon: Option<f64>,
        /// Output directory (default: $GREENWAVE_OUT, else `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// One reportable failure: which exit code it earns and what the JSON
/// error object on stderr says.
struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> CliError {
        CliError { kind: "usage", message: message.into(), code: 1 }
    }

    fn validation(message: impl Into<String>) -> CliError {
        CliError { kind: "validation", message: message.into(), code: 1 }
    }

    fn runtime(message: impl Into<String>) -> CliError {
        CliError { kind: "runtime", message: message.into(), code: 2 }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> CliError {
        CliError::validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        CliError::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(CliError::usage(first_line(&e.to_string()))),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "kind": e.kind, "message": e.message } })
    );
    ExitCode::from(e.code)
}

/// Clap renders usage errors as a paragraph with the usage block
/// attached; the JSON object wants the diagnosis alone.
fn first_line(rendered: &str) -> String {
    let line = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    line.trim_start_matches("error: ").to_string()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let par = parallelism_from_env()?;
    match cli.cmd {
        Command::Validate { config } => validate(&config),
        Command::Simulate { config, policy, seed, horizon, dt, audit, out } => {
            simulate(&config, policy, seed, horizon, dt, audit, &out_dir(out), par)
        }
        Command::Sweep { config, spec, out } => sweep(&config, &spec, &out_dir(out), par),
        Command::Compare { config, policies, seed, horizon, out } => {
            compare(&config, &policies, seed, horizon, &out_dir(out), par)
        }
    }
}

/// `GREENWAVE_THREADS` → execution backend. Unset keeps the default
/// (rayon on its default-size pool); 1 stays on the calling thread;
/// anything larger sizes the global pool.
fn parallelism_from_env() -> Result<Parallelism, CliError> {
    let Some(raw) = std::env::var_os("GREENWAVE_THREADS") else {
        return Ok(Parallelism::default());
    };
    let raw = raw.to_string_lossy();
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "GREENWAVE_THREADS must be a positive integer (got `{raw}`)"
        ))
    })?;
    if n == 1 {
        return Ok(Parallelism::Sequential);
    }
    // A failure here means a pool already exists (only possible if some
    // embedder initialized one first); its size then stands.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Parallelism::Rayon)
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("GREENWAVE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Parse, build, and exercise every validation the engine runs before
/// stepping — including initial densities — without touching the disk.
fn load(config: &Path, dt_override: Option<f64>) -> Result<NetworkGraph, CliError> {
    let mut doc = ConfigDocument::from_path(config)?;
    if let Some(dt) = dt_override {
        doc.sim.dt = dt;
    }
    let graph = build_network(&doc)?;
    NetworkState::initial(&graph)?;
    Ok(graph)
}

fn validate(config: &Path) -> Result<(), CliError> {
    let g = load(config, None)?;
    let sources = g.arcs.iter().filter(|a| a.is_source).count();
    println!(
        "ok: {} arcs ({} sources), {} nodes, {} movements, dt {} s, horizon {} s",
        g.arcs.len(),
        sources,
        g.nodes.len(),
        g.movements.len(),
        g.dt,
        g.sim.horizon,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: &Path,
    policy: Option<PolicyKind>,
    seed: u64,
    horizon: Option<f64>,
    dt: Option<f64>,
    audit: bool,
    out: &Path,
    par: Parallelism,
) -> Result<(), CliError> {
    let g = load(config, dt)?;
    let policy = policy.unwrap_or(g.controller.policy);
    let opts = RunOptions {
        policy: Some(policy),
        seed,
        horizon,
        par,
        record_decisions: audit || g.controller.audit,
        ..RunOptions::default()
    };
    let run = run_scenario(&g, &opts)?;

    write(out, "metrics.csv", &run.metrics.to_csv_string())?;
    write(out, "metrics.json", &run.metrics.to_json_string())?;
    write(out, "stability.json", &to_json(&run.report)?)?;
    let run_id = policy.to_string();
    write(out, "plot.csv", &plot_data(&[(&run_id, &run.metrics)]))?;
    let mut files = "metrics.csv, metrics.json, stability.json, plot.csv".to_string();
    if opts.record_decisions {
        write(out, "decisions.csv", &decisions_csv(&g, &run.decisions))?;
        files.push_str(", decisions.csv");
    }

    println!(
        "{policy} seed {seed}: served {:.1} veh, delay {:.1} s/veh, verdict {:?}",
        run.served, run.delay_per_vehicle, run.report.verdict,
    );
    println!("wrote {} ({files})", out.display());
    Ok(())
}

/// On-disk sweep spec. Weights are per arrival binding, in config order;
/// the probed rate of binding `i` at scale `s` is `s × weights[i]`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    rays: Vec<RayDecl>,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
    #[serde(default = "default_horizon")]
    horizon: f64,
    #[serde(default = "default_replications")]
    replications: usize,
    #[serde(default = "default_master_seed")]
    master_seed: u64,
    /// Defaults to the config's `[controller] policy`.
    #[serde(default)]
    policy: Option<PolicyKind>,
    #[serde(default = "default_scale_max")]
    scale_max: f64,
    #[serde(default = "default_retry_budget")]
    retry_budget: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RayDecl {
    name: String,
    weights: Vec<f64>,
}

fn default_tolerance() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    7200.0
}
fn default_replications() -> usize {
    3
}
fn default_master_seed() -> u64 {
    1
}
fn default_scale_max() -> f64 {
    1.0
}
fn default_retry_budget() -> usize {
    1
}

fn sweep(config: &Path, spec: &Path, out: &Path, par: Parallelism) -> Result<(), CliError> {
    let g = load(config, None)?;
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::validation(format!("{}: {e}", spec.display())))?;
    let file: SweepFile = toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", spec.display())))?;
    if file.rays.is_empty() {
        return Err(CliError::validation(format!(
            "{}: no rays declared",
            spec.display()
        )));
    }
    for ray in &file.rays {
        if ray.weights.len() != g.arrivals.len() {
            return Err(CliError::validation(format!(
                "{}: ray `{}` has {} weights but the config declares {} arrivals",
                spec.display(),
                ray.name,
                ray.weights.len(),
                g.arrivals.len(),
            )));
        }
    }
    if file.tolerance <= 0.0 || file.scale_max <= 0.0 || file.replications == 0 {
        return Err(CliError::validation(format!(
            "{}: tolerance, scale_max and replications must be positive",
            spec.display()
        )));
    }

    let spec = SweepSpec {
        rays: file
            .rays
            .into_iter()
            .map(|r| SweepRay { name: r.name, weights: r.weights })
            .collect(),
        tolerance: file.tolerance,
        horizon: file.horizon,
        replications: file.replications,
        master_seed: file.master_seed,
        policy: file.policy.unwrap_or(g.controller.policy),
        scale_max: file.scale_max,
        retry_budget: file.retry_budget,
        thresholds: StabilityThresholds::default(),
        par,
    };
    let est = capacity_sweep(&g, &spec)?;

    let mut frontier_csv = String::from("ray,scale,stable_scale,unstable_scale,flagged\n");
    for r in &est.frontier {
        frontier_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.ray, r.scale, r.stable_scale, r.unstable_scale, r.flagged
        ));
    }
    write(out, "frontier.csv", &frontier_csv)?;
    write(out, "frontier.json", &to_json(&est)?)?;
    write(out, "points.csv", &est.points_csv())?;

    for r in &est.frontier {
        println!(
            "{}: stable <= {}, unstable >= {}{}",
            r.ray,
            r.stable_scale,
            r.unstable_scale,
            if r.flagged { " (flagged)" } else { "" },
        );
    }
    println!("wrote {} (frontier.csv, frontier.json, points.csv)", out.display());
    Ok(())
}

fn compare(
    config: &Path,
    policies: &[PolicyKind],
    seed: u64,
    horizon: Option<f64>,
    out: &Path,
    par: Parallelism,
) -> Result<(), CliError> {
    if policies.is_empty() {
        return Err(CliError::usage("--policies lists no policies"));
    }
    let g = load(config, None)?;
    let opts = RunOptions { seed, horizon, par, ..RunOptions::default() };
    let (rows, results) = compare_policies(&g, policies, &opts)?;

    let mut csv = String::from("policy,served,delay_per_vehicle,queue_slope,verdict\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:?}\n",
            r.policy, r.served, r.delay_per_vehicle, r.queue_slope, r.verdict
        ));
    }
    write(out, "comparison.csv", &csv)?;
    write(out, "comparison.json", &to_json(&rows)?)?;

    let ids: Vec<String> = policies.iter().map(|p| p.to_string()).collect();
    let runs: Vec<(&str, _)> = ids
        .iter()
        .zip(&results)
        .map(|(id, r)| (id.as_str(), &r.metrics))
        .collect();
    write(out, "plot.csv", &plot_data(&runs))?;

    for r in &rows {
        println!(
            "{}: served {:.1} veh, delay {:.1} s/veh, verdict {:?}",
            r.policy, r.served, r.delay_per_vehicle, r.verdict,
        );
    }
    println!("wrote {} (comparison.csv, comparison.json, plot.csv)", out.display());
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}
