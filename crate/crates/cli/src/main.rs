//! `c2fdiff` command-line harness.
//!
//! Exit codes: 0 success, 2 config, 3 I/O, 4 numeric or failed check.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{Overrides, RunConfig};
use error::{CliError, CliResult};

/// Bumped whenever a report field changes meaning or disappears.
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "c2fdiff",
    version,
    about = "Mean-reverting SDE restoration toolkit"
)]
struct Cli {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output image, checkpoint or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of SDE steps `T`.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Stationary noise level, in `[0, 1]` pixel units.
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward to `T`, then integrate back with the exact score.
    SdeRoundtrip {
        /// Clean image; a generated scene when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the toy denoiser on generated pairs and save a checkpoint to `--out`.
    TrainToy {
        #[arg(long)]
        iters: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restore `--input` with a trained checkpoint and write it to `--out`.
    Restore {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Receptive-field ladder and gradient checks; fails if any claim fails.
    Probe {
        /// Coarse dilations, e.g. `2,4,8`.
        #[arg(long, value_delimiter = ',')]
        dilations: Option<Vec<usize>>,
    },
    /// PSNR, SSIM and fidelity terms of `--input` against `--reference`.
    Metrics {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Write held-out degraded/reference pairs into the `--out` directory.
    GenData {
        #[arg(long)]
        count: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SdeRoundtrip { .. } => "sde-roundtrip",
            Command::TrainToy { .. } => "train-toy",
            Command::Restore { .. } => "restore",
            Command::Probe { .. } => "probe",
            Command::Metrics { .. } => "metrics",
            Command::GenData { .. } => "gen-data",
        }
    }
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    schema_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    result: R,
}

fn emit<R: Serialize>(cli: &Cli, cfg: &RunConfig, result: R) -> CliResult<()> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: cli.command.name(),
        config: cfg,
        result,
    };
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Numeric(format!("report serialization: {e}")))?;
    text.push('\n');
    match &cli.report {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("writing stdout: {e}"))),
    }
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(Overrides {
        seed: cli.seed,
        steps: cli.steps,
        kappa: cli.kappa,
    });
    match &cli.command {
        Command::TrainToy { iters: Some(n), .. } => cfg.train.iters = *n,
        Command::GenData { count: Some(n) } => cfg.data.count = *n,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::SdeRoundtrip { input } => {
            let r = commands::sde_roundtrip(&cfg, input.as_deref(), cli.out.as_deref())?;
            emit(cli, &cfg, r)
        }
        Command::TrainToy { resume, .. } => {
            let r = commands::train(&cfg, resume.as_deref(), &cli.out)?;
            emit(cli, &cfg, r)
        }
        Command::Restore {
            checkpoint,
            input,
            reference,
        } => {
            let r = commands::restore(&cfg, checkpoint, input, reference.as_deref(), &cli.out)?;
            emit(cli, &cfg, r)
        }
        Command::Probe { dilations } => {
            let dilations = match dilations.as_deref() {
                None => None,
                Some(&[a, b, c]) => Some([a, b, c]),
                Some(d) => {
                    return Err(CliError::Config(format!(
                        "--dilations takes three values, got {}",
                        d.len()
                    )))
                }
            };
            let r = commands::probe(&cfg, dilations)?;
            let passed = r.passed;
            let summary = format!(
                "ladder {:?} (expected {:?}), gradients {}",
                r.ladder.measured,
                r.expected,
                if r.gradients_passed { "ok" } else { "FAILED" }
            );
            emit(cli, &cfg, r)?;
            if passed {
                Ok(())
            } else {
                Err(CliError::Numeric(format!("probe failed: {summary}")))
            }
        }
        Command::Metrics { input, reference } => {
            let r = commands::metrics(&cfg, input, reference)?;
            emit(cli, &cfg, r)
        }
        Command::GenData { .. } => {
            let r = commands::gen_data(&cfg, &cli.out)?;
            emit(cli, &cfg, r)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("c2fdiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
