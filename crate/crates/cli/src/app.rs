//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qpkr::schedule::build_timeline;

use crate::commands;
use crate::config::{load_source, parse_a_grid, preset_names, preset_text, resolve, Engine, RawConfig, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "qpkr", version, about = "Quasiperiodically kicked quantum rotor simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one ensemble and write histogram.csv, shape.csv and summary.json.
    Simulate(SimulateArgs),
    /// Normalized Π₀ over an a-grid, written to sweep.csv (resumable).
    Sweep(SweepArgs),
    /// Collapse test over two or more sweep.csv files.
    Collapse(CollapseArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file, or an output file whose embedded config is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled preset (table1_row1 … table1_row7); a --config file overrides it.
    #[arg(long)]
    preset: Option<String>,
    /// quantum or classical.
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated amplitude ratios, starting at 0.
    #[arg(long)]
    a_grid: Option<String>,
    /// Collapse tolerance on the RMS spread in ã.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0: one per core). Does not affect results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    common: Common,
    /// Print the kick timeline as CSV and exit.
    #[arg(long)]
    dump_schedule: bool,
    /// Write the state of trajectory 0 every k primary periods.
    #[arg(long, value_name = "K")]
    snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CollapseArgs {
    /// sweep.csv files.
    files: Vec<PathBuf>,
    /// Collapse tolerance (default from --config, else 0.1).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Config whose [analysis] tolerance is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut raw = RawConfig::default();
    if let Some(name) = &args.preset {
        let text = preset_text(name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset `{name}` (available: {})", preset_names().join(", ")))
        })?;
        raw = RawConfig::parse(&text, &format!("preset {name}"))?;
    }
    if let Some(path) = &args.config {
        let name = path.display().to_string();
        let text = load_source(&read(path)?, &name)?;
        raw = raw.overlay(RawConfig::parse(&text, &name)?);
    }
    if args.preset.is_none() && args.config.is_none() {
        return Err(CliError::Usage("give --preset and/or --config".into()));
    }
    let mut cfg = resolve(&raw)?;
    if let Some(engine) = args.engine {
        cfg.engine = engine;
    }
    if let Some(seed) = args.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(grid) = &args.a_grid {
        cfg.analysis.a_grid = Some(parse_a_grid(grid).map_err(|m| CliError::Usage(format!("--a-grid: {m}")))?);
    }
    if let Some(t) = args.tolerance {
        if !(t >= 0.0) {
            return Err(CliError::Usage("--tolerance must be non-negative".into()));
        }
        cfg.analysis.tolerance = t;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    common.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn with_threads<T>(threads: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load_config(&args.config)?;
            if args.dump_schedule {
                let tl = build_timeline(&cfg.params, cfg.ensemble.merge_tolerance)?;
                print!("{}", tl.to_csv());
                return Ok(());
            }
            let out = out_dir(&args.common)?;
            let outcome = with_threads(args.common.threads, || commands::simulate(&cfg, &out, args.snapshot_every))?;
            let shape = match &outcome.shape {
                Ok(fit) => fit.verdict.to_string(),
                Err(_) => "undetermined".into(),
            };
            println!(
                "pi0 = {:.6} ± {:.6}  p2 = {:.4}  shape = {shape}",
                outcome.result.pi0, outcome.pi0_err, outcome.result.p2
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args.config)?;
            let out = out_dir(&args.common)?;
            let curve = with_threads(args.common.threads, || commands::sweep(&cfg, &out))?;
            for p in curve.points() {
                println!("a = {:.4}  atilde = {:.4}  pi0 = {:.6} ± {:.6}", p.a, p.atilde, p.pi0, p.pi0_err);
            }
            Ok(())
        }
        Command::Collapse(args) => {
            let mut tolerance = qpkr::analysis::DEFAULT_COLLAPSE_TOLERANCE;
            if let Some(path) = &args.config {
                let name = path.display().to_string();
                let raw = RawConfig::parse(&load_source(&read(path)?, &name)?, &name)?;
                tolerance = resolve(&raw)?.analysis.tolerance;
            }
            if let Some(t) = args.tolerance {
                tolerance = t;
            }
            if !(tolerance >= 0.0) {
                return Err(CliError::Usage("--tolerance must be non-negative".into()));
            }
            let out = out_dir(&args.common)?;
            let report = with_threads(args.common.threads, || commands::collapse(&args.files, tolerance, &out))?;
            println!(
                "collapsed: spread_a = {:.4}  spread_atilde = {:.4}  tolerance = {tolerance}",
                report.spread_a, report.spread_atilde
            );
            Ok(())
        }
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
