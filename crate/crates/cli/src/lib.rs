//! Experiment harness for the blockspin toolkit: configuration, seeded
//! parallel recovery trials, sample-complexity sweeps and the `blockspin`
//! command line.

pub mod commands;
pub mod config;
pub mod harness;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use blockspin::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Output;
use crate::config::{ExperimentConfig, OutputFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_MALFORMED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "blockspin", version, about = "Sampling, recovery and fluctuation experiments for the two-block spin model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON, schema version 1).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for trials (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Bin,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Bin => OutputFormat::Bin,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a batch of configurations and write it as CSV or binary.
    Sample {
        /// Also write the planted partition here.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Recover the partition from a batch file.
    Recover {
        #[arg(long)]
        batch: PathBuf,
        /// Planted partition; adds error fields to the report.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Scaled statistics against their critical limit laws.
    Fluct {
        /// Write the quartic density and CDF on a grid over [-8, 8].
        #[arg(long)]
        quartic_table: Option<PathBuf>,
    },
    /// Pair-correlation gaps and their scaling with N.
    Gap,
    /// Minimal sample size for exact recovery over a grid of N.
    Sweep,
}

impl Command {
    fn default_format(&self) -> OutputFormat {
        match self {
            Command::Recover { .. } => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::InvalidArgument(_) | Error::Domain(_) | Error::Resource(_) | Error::Malformed(_) => EXIT_MALFORMED,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", p.display()))),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed.master_seed = seed;
    }
    Ok(cfg)
}

/// Execute a parsed command and return the summary printed on success.
pub fn execute(cli: &Cli) -> Result<serde_json::Value> {
    let cfg = load_config(cli)?;
    let out = Output {
        path: cli.out.clone().or_else(|| cfg.output.path.clone()),
        format: cli.format.map(OutputFormat::from).or(cfg.output.format).unwrap_or(cli.command.default_format()),
    };
    let run = || match &cli.command {
        Command::Sample { truth_out } => commands::cmd_sample(&cfg, &out, truth_out.as_deref()),
        Command::Recover { batch, truth } => commands::cmd_recover(&cfg, &out, batch, truth.as_deref()),
        Command::Fluct { quartic_table } => commands::cmd_fluct(&cfg, &out, quartic_table.as_deref()),
        Command::Gap => commands::cmd_gap(&cfg, &out),
        Command::Sweep => commands::cmd_sweep(&cfg, &out),
    };
    match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parse `args`, run, report, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_MALFORMED } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            // Data already went to stdout when no output path was given.
            if cli.out.is_some() || !summary["path"].is_null() {
                let mut stdout = std::io::stdout().lock();
                let _ = writeln!(stdout, "{summary}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("blockspin: {e}");
            exit_code(&e)
        }
    }
}
