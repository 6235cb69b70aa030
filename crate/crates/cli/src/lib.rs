//! Command-line front end: reads a JSON run config, applies overrides,
//! checks every precondition, runs one scenario and writes a results CSV,
//! the resolved config and a summary.
//!
//! Exit codes: 0 converged, 1 finished without converging, 2 invalid
//! config, 3 numeric failure.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::{apply_override, parse_value, read_value, GridSpec, RunConfig, Scenario};
use output::{to_json, OutputPaths};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot write output: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<kl_gauss::Error> for CliError {
    fn from(e: kl_gauss::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "kl-gauss",
    version,
    about = "Gaussian approximation of path-space measures by relative entropy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical-point branches of the scalar double well over a temperature grid.
    DoubleWell {
        #[command(flatten)]
        common: Common,
        /// Temperature grid `start:stop:step`, inclusive.
        #[arg(long, value_name = "START:STOP:STEP")]
        eps_grid: Option<String>,
    },
    /// Best Gaussian approximation of a path-space target.
    Approximate(Common),
    /// Gaussian-mixture fit against the best single Gaussian.
    Mixture(Common),
    /// Chord inequality along displacement interpolations.
    Interpolate(Common),
    /// Fit, then equivalence, distance and normaliser diagnostics.
    Diagnose(Common),
    /// Mollifier or oscillating multiplication-potential sequences.
    SequenceStudy(Common),
    /// Check a config without running it and print the resolved config.
    Validate {
        /// Config file; must name its scenario.
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config; every field is optional.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, or a CSV path with the JSON files written beside it.
    #[arg(long, value_name = "PATH")]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-path override such as `basis.modes=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn load(
    path: Option<&PathBuf>,
    overrides: &[String],
    scenario: Option<Scenario>,
) -> Result<RunConfig, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            read_value(&text, &p.display().to_string())?
        }
        None => Value::Object(Default::default()),
    };
    let scenario = scenario.or_else(|| serde_json::from_value(value.get("scenario")?.clone()).ok());
    if let Some(scenario) = scenario {
        config::seed_sections(&mut value, scenario, overrides);
    }
    let mut errors = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut value, o) {
            errors.push(e);
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    parse_value(value)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("KL_GAUSS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::config(format!(
            "KL_GAUSS_THREADS: expected a positive integer, got `{raw}`"
        ))
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn run_scenario(
    scenario: Scenario,
    common: &Common,
    eps_grid: Option<&str>,
) -> Result<i32, CliError> {
    let mut cfg = load(common.config.as_ref(), &common.overrides, Some(scenario))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(grid) = eps_grid {
        let spec =
            GridSpec::parse(grid).map_err(|e| CliError::config(format!("--eps-grid: {e}")))?;
        cfg.double_well
            .get_or_insert_with(|| serde_json::from_str("{}").expect("defaults"))
            .epsilon_grid = spec;
    }
    let cfg = cfg.resolve(scenario)?;
    let prep = cfg.prepare()?;
    let outcome = run::execute(&cfg, &prep)?;
    let paths = OutputPaths::from_out(cfg.out.as_deref().expect("resolved"));
    let summary = to_json(&outcome.summary)?;
    output::write_all(&paths, &outcome.table.render(), &to_json(&cfg)?, &summary)?;
    println!(
        "{}: {} rows written to {}",
        scenario.name(),
        outcome.table.len(),
        paths.csv.display()
    );
    if !outcome.converged {
        eprintln!(
            "warning: not every optimisation converged; see {}",
            paths.summary.display()
        );
        return Ok(1);
    }
    Ok(0)
}

fn validate(path: &PathBuf, overrides: &[String]) -> Result<i32, CliError> {
    let cfg = load(Some(path), overrides, None)?;
    let scenario = cfg.scenario.ok_or_else(|| {
        CliError::config("scenario: missing field `scenario` (required for validate)")
    })?;
    let cfg = cfg.resolve(scenario)?;
    let result = cfg.prepare();
    print!("{}", to_json(&cfg)?);
    match result {
        Ok(_) => {
            eprintln!("{}: valid {} config", path.display(), scenario.name());
            Ok(0)
        }
        Err(CliError::Numeric(msg)) => Err(CliError::config(msg)),
        Err(e) => Err(e),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::DoubleWell { common, eps_grid } => {
            run_scenario(Scenario::DoubleWell, common, eps_grid.as_deref())
        }
        Command::Approximate(c) => run_scenario(Scenario::Approximate, c, None),
        Command::Mixture(c) => run_scenario(Scenario::Mixture, c, None),
        Command::Interpolate(c) => run_scenario(Scenario::Interpolate, c, None),
        Command::Diagnose(c) => run_scenario(Scenario::Diagnose, c, None),
        Command::SequenceStudy(c) => run_scenario(Scenario::SequenceStudy, c, None),
        Command::Validate { config, overrides } => {
            validate(config, overrides).map_err(|e| match e {
                CliError::Config(_) => e,
                other => CliError::config(other.to_string()),
            })
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
