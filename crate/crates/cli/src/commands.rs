//! One function per subcommand. Each returns the `result` block of its report.

use std::path::{Path, PathBuf};

use serde::Serialize;

use c2fdiff::checkpoint::Checkpoint;
use c2fdiff::data::{load_image, save_image};
use c2fdiff::experiments::{
    self, derive_seed, probe_suite, streams, train_toy, IterationLog, ProbeReport, RoundtripStudy,
    TrainSummary,
};
use c2fdiff::losses::{combined_loss, LossReport};
use c2fdiff::metrics::{MetricReport, Psnr};
use c2fdiff::Tensor64;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn require<'a>(flag: &str, p: &'a Option<PathBuf>) -> CliResult<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| CliError::Config(format!("{flag} is required for this command")))
}

#[derive(Debug, Serialize)]
pub struct RoundtripResult {
    pub steps: usize,
    pub deterministic: bool,
    pub psnr_db: Psnr,
    /// RMS distance to the noise-free mean path, `t = T … 0`.
    pub residuals: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered: Option<String>,
    /// Mean over `roundtrip.seeds` generated scenes; absent with `--input`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<RoundtripStudy>,
}

pub fn sde_roundtrip(
    cfg: &RunConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<RoundtripResult> {
    let schedule = cfg.schedule.build()?;
    let rt = cfg.roundtrip;
    let (clean, mean, seed) = match input {
        Some(p) => {
            let clean: Tensor64 = load_image(p)?;
            let pair = cfg.data.degradation.apply(&clean, cfg.seed)?;
            (clean, pair.degraded, cfg.seed)
        }
        None => {
            let pair =
                experiments::roundtrip_scene::<f64>(&cfg.data.degradation, rt.size, cfg.seed, 0)?;
            (
                pair.reference,
                pair.degraded,
                experiments::roundtrip_seed(cfg.seed, 0),
            )
        }
    };
    let outcome = experiments::sde_roundtrip(&schedule, &clean, &mean, seed, rt.deterministic)?;
    if let Some(p) = out {
        save_image(p, &outcome.recovered)?;
    }
    let study = match input {
        Some(_) => None,
        None => Some(experiments::roundtrip_study::<f64>(
            &schedule,
            &cfg.data.degradation,
            rt.size,
            rt.seeds,
            cfg.seed,
            rt.deterministic,
        )?),
    };
    Ok(RoundtripResult {
        steps: schedule.steps(),
        deterministic: rt.deterministic,
        psnr_db: Psnr(outcome.psnr_db),
        residuals: outcome.residuals,
        recovered: out.map(display),
        study,
    })
}

#[derive(Debug, Serialize)]
pub struct TrainResult {
    pub checkpoint: String,
    pub resumed_from: Option<u64>,
    pub iterations: u64,
    pub summary: Option<TrainSummary>,
    pub history: Vec<IterationLog>,
}

pub fn train(
    cfg: &RunConfig,
    resume: Option<&Path>,
    out: &Option<PathBuf>,
) -> CliResult<TrainResult> {
    let out = require("--out", out)?;
    let tc = cfg.train_config();
    let resume = resume.map(Checkpoint::load).transpose()?;
    let outcome = train_toy::<f64>(&tc, resume.as_ref(), |_| {})?;
    outcome.checkpoint.save(out)?;
    Ok(TrainResult {
        checkpoint: display(out),
        resumed_from: resume.map(|c| c.iteration),
        iterations: outcome.checkpoint.iteration,
        summary: outcome.summary,
        history: outcome.history,
    })
}

#[derive(Debug, Serialize)]
pub struct RestoreResult {
    pub checkpoint: String,
    pub input: String,
    pub output: String,
    pub deterministic: bool,
    /// Restored image against the reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    /// Degraded input against the same reference, for comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_metrics: Option<MetricReport>,
}

pub fn restore(
    cfg: &RunConfig,
    checkpoint: &Option<PathBuf>,
    input: &Option<PathBuf>,
    reference: Option<&Path>,
    out: &Option<PathBuf>,
) -> CliResult<RestoreResult> {
    let ck_path = require("--checkpoint", checkpoint)?;
    let input = require("--input", input)?;
    let out = require("--out", out)?;
    let ck = Checkpoint::load(ck_path)?;
    let net = ck.denoiser::<f64>()?;
    let schedule = ck.schedule.build()?;
    let degraded: Tensor64 = load_image(input)?;
    let restored = experiments::restore_image(
        &net,
        &schedule,
        &degraded,
        derive_seed(cfg.seed, streams::HOLDOUT, 0),
        cfg.restore.deterministic,
    )?;
    save_image(out, &restored)?;
    let (metrics, input_metrics) = match reference {
        Some(r) => {
            let reference: Tensor64 = load_image(r)?;
            let id = display(r);
            (
                Some(MetricReport::compute(
                    &reference,
                    &restored,
                    &id,
                    display(out),
                )?),
                Some(MetricReport::compute(
                    &reference,
                    &degraded,
                    &id,
                    display(input),
                )?),
            )
        }
        None => (None, None),
    };
    Ok(RestoreResult {
        checkpoint: display(ck_path),
        input: display(input),
        output: display(out),
        deterministic: cfg.restore.deterministic,
        metrics,
        input_metrics,
    })
}

pub fn probe(cfg: &RunConfig, dilations: Option<[usize; 3]>) -> CliResult<ProbeReport> {
    let p = cfg.probe;
    Ok(probe_suite(
        dilations.unwrap_or(p.dilations),
        p.channels,
        cfg.seed,
        p.trials,
        p.block_trials,
    )?)
}

#[derive(Debug, Serialize)]
pub struct MetricsResult {
    pub metrics: MetricReport,
    /// Exact pixel, Canny-edge and histogram terms with the configured weights.
    pub losses: LossReport,
}

pub fn metrics(
    cfg: &RunConfig,
    input: &Option<PathBuf>,
    reference: &Option<PathBuf>,
) -> CliResult<MetricsResult> {
    let input = require("--input", input)?;
    let reference = require("--reference", reference)?;
    let a: Tensor64 = load_image(reference)?;
    let b: Tensor64 = load_image(input)?;
    Ok(MetricsResult {
        metrics: MetricReport::compute(&a, &b, display(reference), display(input))?,
        losses: combined_loss(&b, &a, &cfg.loss_weights, &cfg.canny, cfg.bins)?,
    })
}

#[derive(Debug, Serialize)]
pub struct GeneratedPair {
    pub tag: &'static str,
    pub seed: u64,
    pub degraded: String,
    pub reference: String,
}

/// Pairs come from the held-out stream, so they never coincide with the
/// training pool of a `train-toy` run with the same seed.
pub fn gen_data(cfg: &RunConfig, out: &Option<PathBuf>) -> CliResult<Vec<GeneratedPair>> {
    let dir = require("--out", out)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    (0..cfg.data.count as u64)
        .map(|k| {
            let pair = cfg
                .data
                .degradation
                .generate::<f64>(cfg.data.size, derive_seed(cfg.seed, streams::HOLDOUT, k))?;
            let (d, r) = pair.save(dir)?;
            Ok(GeneratedPair {
                tag: pair.tag.as_str(),
                seed: pair.seed,
                degraded: display(&d),
                reference: display(&r),
            })
        })
        .collect()
}
