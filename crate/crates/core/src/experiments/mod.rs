//! End-to-end experiments shared by the CLI and the test suites.

pub mod suite;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Degradation, ImagePair};
use crate::error::Result;
use crate::metrics::psnr;
use crate::nn::Denoiser;
use crate::scalar::Scalar;
use crate::sde::{self, SdeSchedule};
use crate::tensor::Tensor;

pub use suite::{block_grad_check, gradient_suite, probe_suite, GradCase, ProbeReport};
pub use train::{train_toy, IterationLog, TrainConfig, TrainOutcome, TrainSummary};

/// Independent random streams derived from one user seed.
pub mod streams {
    pub const POOL: u64 = 1;
    pub const HOLDOUT: u64 = 2;
    pub const ITERATION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const FORWARD: u64 = 5;
    pub const REVERSE: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream` under `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

#[derive(Debug, Clone)]
pub struct RoundtripOutcome<T> {
    pub noisy: Tensor<T>,
    pub recovered: Tensor<T>,
    pub psnr_db: f64,
    /// RMS distance to the noise-free mean path `μ_t(y0)`, for `t = T, T−1, …, 0`.
    pub residuals: Vec<f64>,
}

fn rms<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    crate::metrics::mse(a, b).map(f64::sqrt)
}

/// Forward-samples `y_T` from `y0`, then integrates back with the exact score.
pub fn sde_roundtrip<T: Scalar>(
    schedule: &SdeSchedule,
    y0: &Tensor<T>,
    mu: &Tensor<T>,
    seed: u64,
    deterministic: bool,
) -> Result<RoundtripOutcome<T>> {
    let t_end = schedule.steps();
    let (noisy, _) = sde::forward_sample(
        schedule,
        y0,
        mu,
        t_end,
        derive_seed(seed, streams::FORWARD, 0),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::REVERSE, 0));
    let mut residuals = Vec::with_capacity(t_end + 1);
    let mut failure = None;
    let recovered = sde::reverse_integrate_observed(
        schedule,
        noisy.clone(),
        mu,
        |y, t| sde::exact_score(schedule, y, y0, mu, t),
        &mut rng,
        deterministic,
        |t, y| match sde::marginal_mean(schedule, y0, mu, t).and_then(|m| rms(y, &m)) {
            Ok(r) => residuals.push(r),
            Err(e) => failure = Some(e),
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RoundtripOutcome {
        psnr_db: psnr(y0, &recovered, 1.0)?,
        noisy,
        recovered,
        residuals,
    })
}

/// Noise seed used for scene `k` of a study.
pub fn roundtrip_seed(base_seed: u64, k: u64) -> u64 {
    derive_seed(base_seed, streams::ITERATION, k)
}

/// Mean roundtrip quality over several generated scenes.
#[derive(Debug, Clone, Serialize)]
pub struct RoundtripStudy {
    pub steps: usize,
    pub seeds: usize,
    pub mean_psnr_db: f64,
    /// Mean RMS error between the original and the recovered image.
    pub mean_rms_error: f64,
    pub per_seed_psnr_db: Vec<f64>,
}

/// Scene `k` of a roundtrip study; the clean image is `y0` and the degraded
/// one is the mean `μ`.
pub fn roundtrip_scene<T: Scalar>(
    degradation: &Degradation,
    size: usize,
    base_seed: u64,
    k: u64,
) -> Result<ImagePair<T>> {
    degradation.generate(size, derive_seed(base_seed, streams::POOL, k))
}

/// Runs [`sde_roundtrip`] on scenes `0..seeds` of side `size`.
pub fn roundtrip_study<T: Scalar>(
    schedule: &SdeSchedule,
    degradation: &Degradation,
    size: usize,
    seeds: usize,
    base_seed: u64,
    deterministic: bool,
) -> Result<RoundtripStudy> {
    let mut per_seed = Vec::with_capacity(seeds);
    let mut err = 0.0;
    for k in 0..seeds as u64 {
        let pair = roundtrip_scene::<T>(degradation, size, base_seed, k)?;
        let out = sde_roundtrip(
            schedule,
            &pair.reference,
            &pair.degraded,
            roundtrip_seed(base_seed, k),
            deterministic,
        )?;
        err += rms(&pair.reference, &out.recovered)?;
        per_seed.push(out.psnr_db);
    }
    let n = seeds.max(1) as f64;
    Ok(RoundtripStudy {
        steps: schedule.steps(),
        seeds,
        mean_psnr_db: per_seed.iter().sum::<f64>() / n,
        mean_rms_error: err / n,
        per_seed_psnr_db: per_seed,
    })
}

/// Reverse-integrates from `degraded + σ_T·z` with the network score and
/// returns the clamped result.
pub fn restore_image<T: Scalar>(
    net: &Denoiser<T>,
    schedule: &SdeSchedule,
    degraded: &Tensor<T>,
    seed: u64,
    deterministic: bool,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::FORWARD, 0));
    let sigma = T::lit(schedule.std(schedule.steps()));
    let z = Tensor::<T>::randn(degraded.shape(), 1.0, &mut rng);
    let start = degraded.zip_map(&z, |m, z| m + sigma * z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::REVERSE, 0));
    let out = sde::reverse_integrate(
        schedule,
        start,
        degraded,
        |y, t| net.score(schedule, y, degraded, t),
        &mut rng,
        deterministic,
    )?;
    Ok(out.clamp01())
}

/// Mean PSNR of degraded inputs and of restorations over a set of pairs.
#[derive(Debug, Clone, Serialize)]
pub struct RestoreEvaluation {
    pub pairs: usize,
    pub degraded_psnr_db: f64,
    pub restored_psnr_db: f64,
    pub gain_db: f64,
}

pub fn evaluate_restoration<T: Scalar>(
    net: &Denoiser<T>,
    schedule: &SdeSchedule,
    pairs: &[(Tensor<T>, Tensor<T>)],
    seed: u64,
    deterministic: bool,
) -> Result<RestoreEvaluation> {
    let (mut before, mut after) = (0.0, 0.0);
    for (k, (degraded, reference)) in pairs.iter().enumerate() {
        let restored = restore_image(
            net,
            schedule,
            degraded,
            derive_seed(seed, streams::HOLDOUT, k as u64),
            deterministic,
        )?;
        before += psnr(reference, degraded, 1.0)?;
        after += psnr(reference, &restored, 1.0)?;
    }
    let n = pairs.len().max(1) as f64;
    Ok(RestoreEvaluation {
        pairs: pairs.len(),
        degraded_psnr_db: before / n,
        restored_psnr_db: after / n,
        gain_db: (after - before) / n,
    })
}
