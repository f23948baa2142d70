//! Mean-reverting SDE `dy = α(t)(μ − y)dt + β(t)dW` with `β² = 2κ²α`.
//!
//! The forward transition from `s` to `t` is Gaussian with mean
//! `μ + (y_s − μ)·exp(−α̂(s:t))` and variance `κ²(1 − exp(−2α̂(s:t)))`, where
//! `α̂(s:t)` is the integrated reversion rate. Time is discretized uniformly with
//! `dt = 1/T`; step index `i` covers `(i·dt, (i+1)·dt]` and carries rate `α_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stationary standard deviation for 8-bit noise level 90, in `[0, 1]` pixel units.
pub const DEFAULT_KAPPA: f64 = 90.0 / 255.0;
pub const DEFAULT_STEPS: usize = 300;
/// With `dt = 1/T` this gives `α·dt = 0.01` per step at `T = 300`.
pub const DEFAULT_ALPHA_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlphaProfile {
    #[default]
    Constant,
    /// Rises linearly; mean rate equals the scale.
    Linear,
    /// Rises along a half cosine; mean rate equals the scale.
    Cosine,
}

/// Serializable schedule description; [`ScheduleParams::build`] makes the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub kappa: f64,
    pub profile: AlphaProfile,
    pub alpha_scale: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            kappa: DEFAULT_KAPPA,
            profile: AlphaProfile::Constant,
            alpha_scale: DEFAULT_ALPHA_SCALE,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<SdeSchedule> {
        SdeSchedule::new(self.steps, self.kappa, self.profile, self.alpha_scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeSchedule {
    steps: usize,
    kappa: f64,
    dt: f64,
    profile: AlphaProfile,
    alpha_scale: f64,
    alpha: Vec<f64>,
    cum_alpha: Vec<f64>,
}

impl SdeSchedule {
    pub fn new(steps: usize, kappa: f64, profile: AlphaProfile, alpha_scale: f64) -> Result<Self> {
        const OP: &str = "make_schedule";
        if steps == 0 {
            return Err(Error::arg(OP, "step count must be at least 1"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::arg(
                OP,
                format!("kappa must be positive, got {kappa}"),
            ));
        }
        if !(alpha_scale > 0.0 && alpha_scale.is_finite()) {
            return Err(Error::arg(
                OP,
                format!("alpha scale must be positive, got {alpha_scale}"),
            ));
        }
        let t = steps as f64;
        let dt = 1.0 / t;
        let alpha: Vec<f64> = (0..steps)
            .map(|i| {
                let u = (i as f64 + 0.5) / t;
                match profile {
                    AlphaProfile::Constant => alpha_scale,
                    AlphaProfile::Linear => alpha_scale * 2.0 * u,
                    AlphaProfile::Cosine => alpha_scale * (1.0 - (std::f64::consts::PI * u).cos()),
                }
            })
            .collect();
        let mut cum_alpha = Vec::with_capacity(steps + 1);
        cum_alpha.push(0.0);
        let mut acc = 0.0;
        for a in &alpha {
            acc += a * dt;
            cum_alpha.push(acc);
        }
        Ok(Self {
            steps,
            kappa,
            dt,
            profile,
            alpha_scale,
            alpha,
            cum_alpha,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn profile(&self) -> AlphaProfile {
        self.profile
    }

    pub fn alpha_scale(&self) -> f64 {
        self.alpha_scale
    }

    /// Reversion rate on step interval `i`.
    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i]
    }

    /// `β_i² = 2κ²α_i`.
    pub fn beta_sq(&self, i: usize) -> f64 {
        2.0 * self.kappa * self.kappa * self.alpha[i]
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta_sq(i).sqrt()
    }

    /// `α̂(0:t)`, the integrated rate up to step `t`.
    pub fn cum_alpha(&self, t: usize) -> f64 {
        self.cum_alpha[t]
    }

    /// `α̂(s:t)`.
    pub fn alpha_hat(&self, s: usize, t: usize) -> f64 {
        self.cum_alpha[t] - self.cum_alpha[s]
    }

    pub fn stationary_variance(&self) -> f64 {
        self.kappa * self.kappa
    }

    /// `σ_t² = κ²(1 − exp(−2α̂(0:t)))`.
    pub fn variance(&self, t: usize) -> f64 {
        transition_variance(self.kappa, self.cum_alpha[t])
    }

    pub fn std(&self, t: usize) -> f64 {
        self.variance(t).sqrt()
    }

    fn check_time(&self, op: &'static str, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::arg(
                op,
                format!("time index {t} outside [0, {}]", self.steps),
            ));
        }
        Ok(())
    }
}

impl Default for SdeSchedule {
    fn default() -> Self {
        Self::new(
            DEFAULT_STEPS,
            DEFAULT_KAPPA,
            AlphaProfile::Constant,
            DEFAULT_ALPHA_SCALE,
        )
        .expect("default schedule is valid")
    }
}

fn transition_variance(kappa: f64, alpha_hat: f64) -> f64 {
    // -expm1 keeps precision for small α̂.
    kappa * kappa * -(-2.0 * alpha_hat).exp_m1()
}

fn check_pair<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Mean and variance of `y_t | y_s`.
pub fn transition_stats<T: Scalar>(
    schedule: &SdeSchedule,
    y_s: &Tensor<T>,
    mu: &Tensor<T>,
    s: usize,
    t: usize,
) -> Result<(Tensor<T>, f64)> {
    const OP: &str = "transition_stats";
    schedule.check_time(OP, t)?;
    if s > t {
        return Err(Error::arg(OP, format!("start {s} after end {t}")));
    }
    check_pair(OP, y_s, mu)?;
    let a = schedule.alpha_hat(s, t);
    let decay = T::lit((-a).exp());
    let mean = y_s.zip_map(mu, |y, m| m + (y - m) * decay)?;
    Ok((mean, transition_variance(schedule.kappa, a)))
}

/// `μ_t(y0)`: the mean of `y_t` started from `y0` at time 0.
pub fn marginal_mean<T: Scalar>(
    schedule: &SdeSchedule,
    y0: &Tensor<T>,
    mu: &Tensor<T>,
    t: usize,
) -> Result<Tensor<T>> {
    transition_stats(schedule, y0, mu, 0, t).map(|(m, _)| m)
}

/// Draws `y_t = μ_t(y0) + σ_t ζ`; returns `(y_t, ζ)`.
pub fn forward_sample_with<T: Scalar, R: Rng + ?Sized>(
    schedule: &SdeSchedule,
    y0: &Tensor<T>,
    mu: &Tensor<T>,
    t: usize,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (mean, var) = transition_stats(schedule, y0, mu, 0, t)?;
    let noise = Tensor::randn(y0.shape(), 1.0, rng);
    let sigma = T::lit(var.sqrt());
    let y_t = mean.zip_map(&noise, |m, z| m + sigma * z)?;
    Ok((y_t, noise))
}

pub fn forward_sample<T: Scalar>(
    schedule: &SdeSchedule,
    y0: &Tensor<T>,
    mu: &Tensor<T>,
    t: usize,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    forward_sample_with(schedule, y0, mu, t, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Score of the transition density, `−(y_t − μ_t(y0)) / σ_t²`.
pub fn exact_score<T: Scalar>(
    schedule: &SdeSchedule,
    y_t: &Tensor<T>,
    y0: &Tensor<T>,
    mu: &Tensor<T>,
    t: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "exact_score";
    if t == 0 {
        return Err(Error::arg(
            OP,
            "score is undefined at t = 0 (zero variance)",
        ));
    }
    check_pair(OP, y_t, y0)?;
    let mean = marginal_mean(schedule, y0, mu, t)?;
    let inv_var = T::lit(1.0 / schedule.variance(t));
    y_t.zip_map(&mean, |y, m| -(y - m) * inv_var)
}

/// `ζ = (y_t − μ_t(x0)) / σ_t` for a clean-image estimate `x0`.
pub fn noise_from_clean<T: Scalar>(
    schedule: &SdeSchedule,
    y_t: &Tensor<T>,
    x0: &Tensor<T>,
    mu: &Tensor<T>,
    t: usize,
) -> Result<Tensor<T>> {
    if t == 0 {
        return Err(Error::arg("noise_from_clean", "undefined at t = 0"));
    }
    let mean = marginal_mean(schedule, x0, mu, t)?;
    let inv_std = T::lit(1.0 / schedule.std(t));
    y_t.zip_map(&mean, |y, m| (y - m) * inv_std)
}

/// Score from a noise estimate: `−ζ / σ_t`.
pub fn score_from_noise<T: Scalar>(
    schedule: &SdeSchedule,
    noise: &Tensor<T>,
    t: usize,
) -> Result<Tensor<T>> {
    if t == 0 {
        return Err(Error::arg("score_from_noise", "undefined at t = 0"));
    }
    let inv_std = T::lit(1.0 / schedule.std(t));
    Ok(noise.map(|z| -z * inv_std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeState<T> {
    pub y: Tensor<T>,
    /// Mean-reversion target (the degraded image).
    pub mu: Tensor<T>,
    pub t: usize,
}

impl<T: Scalar> SdeState<T> {
    pub fn new(y: Tensor<T>, mu: Tensor<T>, t: usize) -> Result<Self> {
        check_pair("SdeState", &y, &mu)?;
        Ok(Self { y, mu, t })
    }
}

/// One backward-in-time Euler–Maruyama step of
/// `dy = [α(μ − y) − β²∇log p_t(y)]dt + β dW̃`, from `t` to `t − 1`.
pub fn reverse_step<T: Scalar, R: Rng + ?Sized>(
    schedule: &SdeSchedule,
    state: &SdeState<T>,
    score: &Tensor<T>,
    rng: &mut R,
    deterministic: bool,
) -> Result<SdeState<T>> {
    const OP: &str = "reverse_step";
    if state.t == 0 {
        return Err(Error::arg(OP, "already at t = 0"));
    }
    schedule.check_time(OP, state.t)?;
    check_pair(OP, &state.y, score)?;
    let i = state.t - 1;
    let dt = schedule.dt();
    let alpha = T::lit(schedule.alpha(i));
    let beta_sq = T::lit(schedule.beta_sq(i));
    let dt_t = T::lit(dt);
    let mut y: Vec<T> = state
        .y
        .data()
        .iter()
        .zip(state.mu.data())
        .zip(score.data())
        .map(|((&y, &m), &s)| y - (alpha * (m - y) - beta_sq * s) * dt_t)
        .collect();
    if !deterministic {
        let amp = T::lit(schedule.beta(i) * dt.sqrt());
        let z = Tensor::<T>::randn(state.y.shape(), 1.0, rng);
        y.iter_mut().zip(z.data()).for_each(|(v, &z)| *v += amp * z);
    }
    let y = Tensor::from_vec(state.y.shape(), y)?;
    y.ensure_finite(OP)?;
    Ok(SdeState {
        y,
        mu: state.mu.clone(),
        t: i,
    })
}

/// Integrates from `t = T` down to 0. `score_fn(y_t, t)` supplies the score;
/// `observe(t, y_t)` sees every state including the first and last.
pub fn reverse_integrate_observed<T, R, S, O>(
    schedule: &SdeSchedule,
    y_start: Tensor<T>,
    mu: &Tensor<T>,
    mut score_fn: S,
    rng: &mut R,
    deterministic: bool,
    mut observe: O,
) -> Result<Tensor<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    S: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
    O: FnMut(usize, &Tensor<T>),
{
    let mut state = SdeState::new(y_start, mu.clone(), schedule.steps())?;
    observe(state.t, &state.y);
    while state.t > 0 {
        let score = score_fn(&state.y, state.t)?;
        state = reverse_step(schedule, &state, &score, rng, deterministic)?;
        observe(state.t, &state.y);
    }
    Ok(state.y)
}

pub fn reverse_integrate<T, R, S>(
    schedule: &SdeSchedule,
    y_start: Tensor<T>,
    mu: &Tensor<T>,
    score_fn: S,
    rng: &mut R,
    deterministic: bool,
) -> Result<Tensor<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    S: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    reverse_integrate_observed(
        schedule,
        y_start,
        mu,
        score_fn,
        rng,
        deterministic,
        |_, _| {},
    )
}
