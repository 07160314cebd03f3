//! Batch front end: reads JSON run and panel files, evaluates closed forms
//! against oracles and simulation, and writes CSV or JSON reports.
//!
//! Exit codes: 0 pass, 1 validation failure, 2 config error, 3 model error.

pub mod config;
pub mod report;
pub mod run;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skipfree::scalar::Mode;

use config::{ConfigError, Format, OutputSpec, RunConfig};
use report::Report;
use run::{Options, RunError};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "skipfree-cli", version, about = "Fluctuation identities for skip-free chains, checked against oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the queries of a run file.
    Run(Common),
    /// Run the randomized regression panel described by a panel file.
    Validate(Common),
    /// Monte Carlo estimates for the queries of a run file.
    Simulate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Input JSON file.
    pub file: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Float)]
    pub mode: ModeArg,
    /// Float tolerance between closed form and oracle.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Simulation seed, replacing the one in the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output format, replacing the one in the file.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Output path, replacing the one in the file ("-" for standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Float,
    Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl Common {
    fn options(&self) -> Options {
        let mode = match self.mode {
            ModeArg::Float => Mode::Float,
            ModeArg::Rational => Mode::Rational,
        };
        Options { mode, tol: self.tol, seed: self.seed }
    }

    fn output(&self, file: OutputSpec) -> OutputSpec {
        let format = match self.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Json) => Format::Json,
            None => file.format,
        };
        let path = match &self.out {
            Some(p) if p.as_os_str() == "-" => None,
            Some(p) => Some(p.clone()),
            None => file.path,
        };
        OutputSpec { format, path }
    }
}

fn emit(report: &Report, spec: &OutputSpec, stdout: &mut dyn Write) -> Result<(), ConfigError> {
    let res = match &spec.path {
        None => report.write(spec.format, &mut *stdout),
        Some(p) => File::create(p)
            .and_then(|f| report.write(spec.format, BufWriter::new(f)))
            .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", p.display()))),
    };
    res.map_err(|e| ConfigError::at("/output/path", e))
}

/// Runs one command, writing the report to `stdout` unless a path is
/// configured and diagnostics to `stderr`. Returns the exit code.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let outcome = match &cli.command {
        Command::Run(c) | Command::Simulate(c) => RunConfig::from_path(&c.file).map_err(RunError::from).and_then(|cfg| {
            let simulate = matches!(cli.command, Command::Simulate(_));
            let report = if simulate { run::simulate_only(&cfg, &c.options())? } else { run::run(&cfg, &c.options())? };
            emit(&report, &c.output(cfg.output.clone()), stdout)?;
            Ok(report.all_pass())
        }),
        Command::Validate(c) => config::panel_from_path(&c.file).map_err(RunError::from).and_then(|spec| {
            let v = run::validate(&spec, &c.options())?;
            emit(&v.report, &c.output(OutputSpec::default()), stdout)?;
            Ok(v.passed)
        }),
    };
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                RunError::Config(_) => EXIT_CONFIG,
                RunError::Model { .. } => EXIT_MODEL,
            }
        }
    }
}
