//! Command drivers behind the `svc-cache` binary.
//!
//! Exit codes: 0 success, 1 invalid input or I/O failure, 2 optimizer abort,
//! 3 placement/library fingerprint mismatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::montecarlo::{
    analytic_delay, estimate_delay, policy_for, sweep, write_sweep_csv, CachePolicy, DeliveryMode,
    PolicyKind, Scenario, SweepAxis, TrialConfig,
};
use crate::optimizer::optimize_default;
use crate::policy::PlacementFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_OPTIMIZER_ABORT: i32 = 2;
pub const EXIT_FINGERPRINT: i32 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SVC_CACHE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "svc-cache",
    version,
    about = "Random caching of SVC video in three-tier edge networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the random placement; writes placement.json and trace.csv into --out.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Analytic and Monte Carlo delay of a placement and of every baseline.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Placement JSON written by `optimize`.
        #[arg(long)]
        placement: PathBuf,
    },
    /// Delay of every policy across the configured grid of one axis.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// backhaul_rate or sbs_cache_size.
        #[arg(long)]
        axis: String,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON). Defaults apply to every absent field.
    #[arg(long)]
    pub config: PathBuf,
    /// Output path: a directory for `optimize`, a CSV file otherwise.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides trials.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides trials.n_trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Restricts trials.modes to one mode: sequential, parallel_ilt or slt.
    #[arg(long)]
    pub mode: Option<String>,
}

impl CommonArgs {
    /// Loads the config and applies the command-line overrides.
    pub fn load_config(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.trials.seed = seed;
        }
        if let Some(n) = self.trials {
            config.trials.n_trials = n;
        }
        if let Some(mode) = &self.mode {
            let mode = DeliveryMode::parse(mode)
                .ok_or_else(|| Error::invalid("--mode", format!("unknown mode {mode:?}")))?;
            config.trials.modes = vec![mode];
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::OptimizerAbort { .. } => EXIT_OPTIMIZER_ABORT,
        Error::FingerprintMismatch { .. } => EXIT_FINGERPRINT,
        _ => EXIT_INVALID,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    let result = match &cli.command {
        Command::Optimize { common } => cmd_optimize(common),
        Command::Evaluate { common, placement } => cmd_evaluate(common, placement),
        Command::Sweep { common, axis } => cmd_sweep(common, axis),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::invalid(
                THREADS_ENV,
                format!("expected a positive integer, got {value:?}"),
            )
        })?;
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Comment lines opening every CSV output.
fn header_lines(command: &str, config: &ExperimentConfig) -> String {
    format!(
        "# svc-cache {command}\n# config: {}\n# seed: {}\n",
        config.to_json_line(),
        config.trials.seed
    )
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn provenance(command: &str, config: &ExperimentConfig) -> serde_json::Value {
    json!({
        "command": command,
        "config": config,
        "seed": config.trials.seed,
    })
}

/// Writes `<out>/placement.json` and `<out>/trace.csv`.
pub fn cmd_optimize(args: &CommonArgs) -> Result<()> {
    let config = args.load_config()?;
    let scenario = config.scenario()?;
    let out = &args.out;
    fs::create_dir_all(out)?;
    let result = optimize_default(
        &scenario.library,
        &scenario.delay_params(),
        &scenario.capacities,
        &config.optimizer,
    );
    let (placement, trace) = match result {
        Ok(v) => v,
        Err(Error::OptimizerAbort {
            iteration,
            reason,
            trace,
        }) => {
            let mut text = header_lines("optimize", &config).into_bytes();
            trace.write_csv(&mut text)?;
            fs::write(out.join("trace.csv"), text)?;
            return Err(Error::OptimizerAbort {
                iteration,
                reason,
                trace,
            });
        }
        Err(e) => return Err(e),
    };

    let mut file = PlacementFile::new(&scenario.library, placement);
    file.provenance = Some(provenance("optimize", &config));
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    fs::write(out.join("placement.json"), json)?;

    let mut text = header_lines("optimize", &config).into_bytes();
    trace.write_csv(&mut text)?;
    fs::write(out.join("trace.csv"), text)?;

    println!(
        "final objective: {} s ({} iterations, converged: {})",
        trace.final_objective().unwrap_or(f64::NAN),
        trace.iterations(),
        trace.converged
    );
    Ok(())
}

/// One row of the `evaluate` output.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub policy: PolicyKind,
    pub mode: DeliveryMode,
    /// Sequential rows only; the analytic model sums layer delays.
    pub analytic_delay_s: Option<f64>,
    pub mc_delay_s: f64,
    pub mc_stderr_s: f64,
    pub n_trials: usize,
}

/// Evaluates `placement` (reported as `random-svc`) and every baseline
/// under each configured mode, all on the same trial seed.
pub fn evaluate_rows(
    config: &ExperimentConfig,
    scenario: &Scenario,
    placement: &crate::policy::RandomPlacement,
) -> Result<Vec<EvaluationRow>> {
    let mut rows = Vec::new();
    for kind in PolicyKind::ALL {
        let policy: CachePolicy = policy_for(scenario, kind, &config.optimizer, Some(placement))?;
        let analytic = analytic_delay(scenario, &policy)?;
        for &mode in &config.trials.modes {
            let mc = estimate_delay(
                scenario,
                &policy,
                &TrialConfig {
                    n_trials: config.trials.n_trials,
                    seed: config.trials.seed,
                    mode,
                },
            )?;
            rows.push(EvaluationRow {
                policy: kind,
                mode,
                analytic_delay_s: (mode == DeliveryMode::Sequential).then_some(analytic),
                mc_delay_s: mc.mean,
                mc_stderr_s: mc.std_error,
                n_trials: mc.n_trials,
            });
        }
    }
    Ok(rows)
}

/// Writes the evaluation CSV to `args.out`.
pub fn cmd_evaluate(args: &CommonArgs, placement_path: &Path) -> Result<()> {
    let config = args.load_config()?;
    let scenario = config.scenario()?;
    let text = fs::read_to_string(placement_path)?;
    let file: PlacementFile = serde_json::from_str(&text)?;
    let placement = file.into_placement(&scenario.library)?;
    let d2d = crate::policy::check_feasibility(
        &placement.d2d,
        &scenario.library,
        scenario.capacities.d2d_bits,
    )?;
    let sbs = crate::policy::check_feasibility(
        &placement.sbs,
        &scenario.library,
        scenario.capacities.sbs_bits,
    )?;
    if !(d2d.feasible && sbs.feasible) {
        eprintln!("warning: placement exceeds the configured cache capacity");
    }
    let rows = evaluate_rows(&config, &scenario, &placement)?;

    create_parent(&args.out)?;
    let mut out = header_lines("evaluate", &config).into_bytes();
    writeln!(
        out,
        "# placement_sha256: {}",
        hex::encode(Sha256::digest(text.as_bytes()))
    )?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "policy",
            "mode",
            "analytic_delay_s",
            "mc_delay_s",
            "mc_stderr_s",
            "n_trials",
            "seed",
        ])?;
        for r in &rows {
            w.write_record([
                r.policy.name().to_string(),
                r.mode.name().to_string(),
                r.analytic_delay_s
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                r.mc_delay_s.to_string(),
                r.mc_stderr_s.to_string(),
                r.n_trials.to_string(),
                config.trials.seed.to_string(),
            ])?;
        }
        w.flush()?;
    }
    fs::write(&args.out, out)?;
    Ok(())
}

/// Writes the sweep CSV for `axis` to `args.out`.
pub fn cmd_sweep(args: &CommonArgs, axis: &str) -> Result<()> {
    let axis = SweepAxis::parse(axis).ok_or_else(|| {
        Error::invalid(
            "--axis",
            format!("unknown axis {axis:?}; expected backhaul_rate or sbs_cache_size"),
        )
    })?;
    let config = args.load_config()?;
    let scenario = config.scenario()?;
    let rows = sweep(&scenario, &config.sweep_spec(axis), &config.optimizer)?;
    create_parent(&args.out)?;
    let mut out = header_lines("sweep", &config).into_bytes();
    write_sweep_csv(&rows, &mut out)?;
    fs::write(&args.out, out)?;
    Ok(())
}
