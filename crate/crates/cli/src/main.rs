//! `levymut`: simulate and verify stochastic mutualism scenarios.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use levymut::analysis::{classify_regime, convergence_study};
use levymut::bounds::{bound_processes, BoundTrajectories};
use levymut::levy::PathStreams;
use levymut::report::{ensemble_config, verify_scenario, VerifyError, CONVERGENCE_RATIO};
use levymut::scenario::{load_scenario, Scenario, ScenarioError};
use levymut::sim::{run_ensemble_with, simulate_path, SimError};
use levymut::PathRecord;
use thiserror::Error;

use output::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "levymut",
    version,
    about = "Simulate and verify stochastic mutualism models with jumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true, env = "LEVYMUT_SCENARIO")]
    scenario: Option<PathBuf>,

    /// Base seed; overrides `run.base_seed`.
    #[arg(long, global = true, env = "LEVYMUT_SEED")]
    seed: Option<u64>,

    /// Lattice step; overrides `run.dt`.
    #[arg(long, global = true, env = "LEVYMUT_DT")]
    dt: Option<f64>,

    /// Final time; overrides `run.horizon`.
    #[arg(long, global = true, env = "LEVYMUT_HORIZON")]
    horizon: Option<f64>,

    /// Number of paths; overrides `run.n_paths`.
    #[arg(long, global = true, env = "LEVYMUT_PATHS")]
    paths: Option<usize>,

    /// Directory for output files.
    #[arg(long, global = true, env = "LEVYMUT_OUT_DIR", default_value = "levymut-out")]
    out_dir: PathBuf,

    #[arg(long, global = true, env = "LEVYMUT_FORMAT", value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "LEVYMUT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate path 0 and write it as `path.csv`.
    Simulate,
    /// Run the ensemble and write summary statistics.
    Ensemble,
    /// Run every check enabled in the scenario and write the report.
    Verify,
    /// Print the regime classification; no simulation.
    Classify,
    /// Run the step-halving convergence study.
    Convergence,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no scenario given (use --scenario or LEVYMUT_SCENARIO)")]
    NoScenario,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("cannot start thread pool: {0}")]
    Threads(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Sim(SimError::TooManyFailures { .. })
            | CliError::Verify(VerifyError::Sim(SimError::TooManyFailures { .. })) => 1,
            _ => 2,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn load(cli: &Cli) -> Result<Scenario, CliError> {
    let path = cli.scenario.as_ref().ok_or(CliError::NoScenario)?;
    let mut s = load_scenario(path)?;
    if let Some(seed) = cli.seed {
        s.run.base_seed = seed;
    }
    if let Some(dt) = cli.dt {
        s.run.dt = dt;
    }
    if let Some(h) = cli.horizon {
        s.run.horizon = h;
    }
    if let Some(n) = cli.paths {
        s.run.n_paths = n;
    }
    s.validate()?;
    Ok(s)
}

fn out_dir(cli: &Cli) -> Result<&Path, CliError> {
    fs::create_dir_all(&cli.out_dir).map_err(io_err(format!("cannot create {}", cli.out_dir.display())))?;
    Ok(&cli.out_dir)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let file = dir.join(name);
    fs::write(&file, text).map_err(io_err(format!("cannot write {}", file.display())))
}

fn write_json_file(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
    let file = dir.join(name);
    write_json(&file, value).map_err(io_err(format!("cannot write {}", file.display())))
}

/// Visitor that writes `path_NNN.csv` for each ensemble path.
fn path_writer<'a>(
    dir: &'a Path,
    stride: usize,
) -> impl Fn(usize, &PathRecord, Option<&BoundTrajectories>) -> Result<(), String> + Sync + 'a {
    move |i, path, bounds| {
        let file = dir.join(path_file_name(i));
        write_path_file(&file, path, bounds, stride).map_err(|e| format!("{}: {e}", file.display()))
    }
}

fn simulate(cli: &Cli) -> Result<bool, CliError> {
    let s = load(cli)?;
    let dir = out_dir(cli)?;
    let path = simulate_path(&s.model, s.run.dt, s.run.horizon, &PathStreams::new(s.run.base_seed, 0))?;
    let bounds = s.checks.sandwich.then(|| bound_processes(&s.model, &path));
    let file = dir.join("path.csv");
    write_path_file(&file, &path, bounds.as_ref(), s.output.path_stride)
        .map_err(io_err(format!("cannot write {}", file.display())))?;
    println!("wrote {}", file.display());
    Ok(true)
}

fn ensemble(cli: &Cli) -> Result<bool, CliError> {
    let s = load(cli)?;
    let dir = out_dir(cli)?;
    let cfg = ensemble_config(&s);
    let summary = if s.output.write_paths.unwrap_or(false) {
        run_ensemble_with(&s.model, &cfg, &path_writer(dir, s.output.path_stride))?
    } else {
        run_ensemble_with(&s.model, &cfg, &|_, _, _| Ok(()))?
    };
    match cli.format {
        Format::Csv => write_text(dir, "summary.csv", &ensemble_csv(&summary))?,
        Format::Json => write_json_file(dir, "summary.json", &summary)?,
    }
    println!(
        "{} paths completed, {} aborted; summary in {}",
        summary.completed_paths(),
        summary.failed_paths,
        dir.display()
    );
    Ok(true)
}

fn verify(cli: &Cli) -> Result<bool, CliError> {
    let s = load(cli)?;
    let dir = out_dir(cli)?;
    let write_paths = s.output.write_paths.unwrap_or(false) && s.checks.needs_ensemble();
    let files = if write_paths {
        (0..s.run.n_paths).map(path_file_name).collect()
    } else {
        Vec::new()
    };
    let report = if write_paths {
        verify_scenario(&s, &path_writer(dir, s.output.path_stride), files)?
    } else {
        verify_scenario(&s, &|_, _, _| Ok(()), files)?
    };
    match cli.format {
        Format::Csv => write_text(dir, "report.csv", &report_csv(&report))?,
        Format::Json => write_json_file(dir, "report.json", &report)?,
    }
    for c in &report.checks {
        println!("{:<12} {:?}", c.name, c.verdict);
    }
    Ok(report.passed())
}

fn classify(cli: &Cli) -> Result<bool, CliError> {
    let s = load(cli)?;
    let verdict = classify_regime(&s.model, s.run.horizon);
    match cli.format {
        Format::Csv => print!("{}", regime_csv(&verdict)),
        Format::Json => {
            println!(
                "{}",
                serde_json::to_string_pretty(&verdict).expect("verdict serializes")
            )
        }
    }
    Ok(true)
}

fn convergence(cli: &Cli) -> Result<bool, CliError> {
    let s = load(cli)?;
    let dir = out_dir(cli)?;
    let levels = s.checks.convergence_levels.unwrap_or(3);
    let r = &s.run;
    let study = convergence_study(&s.model, r.dt, levels, r.horizon, r.n_paths, r.base_seed)?;
    match cli.format {
        Format::Csv => write_text(dir, "convergence.csv", &convergence_csv(&study))?,
        Format::Json => write_json_file(dir, "convergence.json", &study)?,
    }
    print!("{}", convergence_csv(&study));
    let (lo, hi) = CONVERGENCE_RATIO;
    Ok(study.ratios.iter().all(|r| (lo..=hi).contains(r)))
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Simulate => simulate(cli),
        Command::Ensemble => ensemble(cli),
        Command::Verify => verify(cli),
        Command::Classify => classify(cli),
        Command::Convergence => convergence(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Threads(e.to_string()))
            .and_then(|pool| pool.install(|| run(&cli))),
        None => run(&cli),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("levymut: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
