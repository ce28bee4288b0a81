//! `bprelab run | verify | rates`.
//!
//! Exit codes: 0 when every verdict passes, 2 when at least one fails, 1 for
//! usage, config, and precondition errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig, Suite};
use crate::error::HarnessError;
use crate::parallel::thread_pool;
use crate::report::{write_outputs, Report, SideFile, Status, Timings};
use crate::suites::{check_preconditions, run_all, run_suite};
use crate::verify::verify_suite;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bprelab", version, about = "Branching processes in random environments: rates, exact moments, Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every suite listed in the config and write report.json plus side files.
    Run(RunArgs),
    /// Run the cross-check battery (exact identities, inequalities, sandwich, identity).
    Verify(RunArgs),
    /// Print the computed rates and condition flags as JSON.
    Rates {
        config: PathBuf,
        /// Exponents to evaluate; defaults to the config's list.
        #[arg(long = "p", num_args = 1..)]
        p: Vec<f64>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core (overrides the config).
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn in_pool<T>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError>
where
    T: Send,
{
    let pool = thread_pool(threads).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs the configured suites and assembles the report and side files.
pub fn execute(cfg: &ExperimentConfig) -> Result<(Report, Vec<SideFile>), HarnessError> {
    let (outputs, timings) = in_pool(cfg.threads, || run_all(cfg))??;
    let mut files = Vec::new();
    let mut suites = Vec::with_capacity(outputs.len());
    for out in outputs {
        files.extend(out.files);
        suites.push(out.report);
    }
    Ok((Report::new(cfg.clone(), suites, timings), files))
}

/// Runs the verify battery as a single-section report.
pub fn execute_verify(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let start = std::time::Instant::now();
    let out = in_pool(cfg.threads, || verify_suite(cfg))?;
    let total = start.elapsed().as_secs_f64();
    let timings = Timings { total_seconds: total, suites: [("verify".to_string(), total)].into() };
    Ok(Report::new(cfg.clone(), vec![out.report], timings))
}

fn print_summary(report: &Report, written: Option<&Path>) {
    for s in &report.suites {
        let passed = s.verdicts.iter().filter(|v| v.passed).count();
        let tag = match s.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        };
        println!("{tag} {} ({passed}/{} verdicts)", s.suite, s.verdicts.len());
        for v in s.verdicts.iter().filter(|v| !v.passed) {
            println!("  failed: {} [{}]{}", v.check, v.anchor, v.detail.as_deref().map(|d| format!(" {d}")).unwrap_or_default());
        }
    }
    if let Some(path) = written {
        println!("report: {}", path.display());
    }
}

fn exit_for(report: &Report) -> i32 {
    if report.passed() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn dispatch(command: Command) -> Result<i32, HarnessError> {
    match command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let (report, files) = execute(&cfg)?;
            let path = write_outputs(&cfg.output_dir, &report, &files)?;
            print_summary(&report, Some(&path));
            Ok(exit_for(&report))
        }
        Command::Verify(args) => {
            let cfg = load(&args)?;
            let report = execute_verify(&cfg)?;
            let path = match &args.out {
                Some(dir) => Some(write_outputs(dir, &report, &[])?),
                None => None,
            };
            print_summary(&report, path.as_deref());
            Ok(exit_for(&report))
        }
        Command::Rates { config, p } => {
            let mut cfg = load_config(&config)?;
            if !p.is_empty() {
                if let Some(bad) = p.iter().find(|x| !(x.is_finite() && **x > 1.0)) {
                    return Err(HarnessError::Runtime(format!("--p values must be finite and > 1, got {bad}")));
                }
                cfg.p = p;
            }
            cfg.suites = vec![Suite::Rates];
            check_preconditions(&cfg)?;
            let out = run_suite(&cfg, Suite::Rates);
            let json = serde_json::to_string_pretty(&out.report).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            println!("{json}");
            Ok(if out.report.status == Status::Pass { EXIT_PASS } else { EXIT_FAIL })
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
