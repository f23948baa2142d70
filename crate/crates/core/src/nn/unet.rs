//! Conditional U-shaped denoiser built from C2F blocks.
//!
//! The network sees `concat(y_t, degraded)` plus a sinusoidal embedding of the
//! step index, and regresses a clean-image estimate `x̂₀ = degraded + head(...)`.
//! The noise field follows from the SDE marginal, `ζ̂ = (y_t − μ_t(x̂₀)) / σ_t`,
//! so the score is `−ζ̂ / σ_t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::block::{c2f_block, BlockSpec, C2fWeights, COARSE_DILATIONS};
use crate::nn::init::ConvParams;
use crate::ops::Conv2dParams;
use crate::scalar::Scalar;
use crate::sde::{self, SdeSchedule};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Channel concatenation of the noisy state and the degraded image.
    #[default]
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub image_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub blocks_per_level: usize,
    pub time_embed_dim: usize,
    pub conditioning: Conditioning,
    pub ln_eps: f64,
    pub group_width: usize,
    pub mlp_reduction: usize,
    /// Init gain of the final head conv.
    pub head_gain: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            image_channels: 3,
            depth: 3,
            base_channels: 16,
            blocks_per_level: 1,
            time_embed_dim: 32,
            conditioning: Conditioning::Concat,
            ln_eps: 1e-6,
            group_width: 4,
            mlp_reduction: 4,
            head_gain: 0.1,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "NetworkSpec";
        if self.image_channels == 0 || self.base_channels == 0 || self.blocks_per_level == 0 {
            return Err(Error::arg(OP, "channel and block counts must be positive"));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::arg(OP, "time_embed_dim must be even and positive"));
        }
        if !(self.head_gain >= 0.0 && self.head_gain.is_finite()) {
            return Err(Error::arg(OP, "head_gain must be finite and non-negative"));
        }
        if self.depth > 8 {
            return Err(Error::arg(OP, "depth above 8 is not supported"));
        }
        for level in 0..=self.depth {
            self.block_spec(level).validate()?;
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn block_spec(&self, level: usize) -> BlockSpec {
        BlockSpec {
            channels: self.level_channels(level),
            dilations: COARSE_DILATIONS,
            ln_eps: self.ln_eps,
            group_width: self.group_width,
            mlp_reduction: self.mlp_reduction,
        }
    }

    /// Spatial dims must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone)]
struct Level {
    time_proj: ConvParams,
    blocks: Vec<C2fWeights>,
}

#[derive(Debug, Clone)]
pub struct Denoiser<T> {
    spec: NetworkSpec,
    store: ParamStore<T>,
    intro: ConvParams,
    time_fc: ConvParams,
    encoders: Vec<Level>,
    downs: Vec<ConvParams>,
    middle: Level,
    ups: Vec<ConvParams>,
    decoders: Vec<Level>,
    head: ConvParams,
}

/// `[sin(t·f_k), cos(t·f_k)]` with geometric frequencies, per batch item.
pub fn timestep_embedding<T: Scalar>(steps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    Tensor::from_fn(Shape::new(steps.len(), dim, 1, 1), |n, c, _, _| {
        let k = c % half;
        let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
        let arg = steps[n] as f64 * freq;
        T::lit(if c < half { arg.sin() } else { arg.cos() })
    })
}

impl<T: Scalar> Denoiser<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let img = spec.image_channels;
        let d = spec.time_embed_dim;
        let intro = ConvParams::new(
            &mut store,
            "intro",
            Shape::new(spec.base_channels, 2 * img, 3, 3),
            1.0,
            &mut rng,
        )?;
        let time_fc = ConvParams::new(
            &mut store,
            "time.fc",
            Shape::new(2 * d, d, 1, 1),
            1.0,
            &mut rng,
        )?;

        let level = |store: &mut ParamStore<T>,
                     name: &str,
                     l: usize,
                     rng: &mut ChaCha8Rng|
         -> Result<Level> {
            let c = spec.level_channels(l);
            let time_proj = ConvParams::new(
                store,
                &format!("{name}.time"),
                Shape::new(c, d, 1, 1),
                1.0,
                rng,
            )?;
            let blocks = (0..spec.blocks_per_level)
                .map(|b| {
                    C2fWeights::init(store, &format!("{name}.block{b}"), spec.block_spec(l), rng)
                })
                .collect::<Result<_>>()?;
            Ok(Level { time_proj, blocks })
        };

        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        for l in 0..spec.depth {
            encoders.push(level(&mut store, &format!("enc{l}"), l, &mut rng)?);
            let (ci, co) = (spec.level_channels(l), spec.level_channels(l + 1));
            downs.push(ConvParams::new(
                &mut store,
                &format!("down{l}"),
                Shape::new(co, ci, 1, 1),
                1.0,
                &mut rng,
            )?);
        }
        let middle = level(&mut store, "mid", spec.depth, &mut rng)?;
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for l in (0..spec.depth).rev() {
            let (ci, co) = (spec.level_channels(l + 1), spec.level_channels(l));
            ups.push(ConvParams::new(
                &mut store,
                &format!("up{l}"),
                Shape::new(co, ci, 1, 1),
                1.0,
                &mut rng,
            )?);
            decoders.push(level(&mut store, &format!("dec{l}"), l, &mut rng)?);
        }
        let head = ConvParams::new(
            &mut store,
            "head",
            Shape::new(img, spec.base_channels, 3, 3),
            spec.head_gain,
            &mut rng,
        )?;
        Ok(Self {
            spec,
            store,
            intro,
            time_fc,
            encoders,
            downs,
            middle,
            ups,
            decoders,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.store.find(name)
    }

    fn conv(&self, tape: &mut Tape<T>, x: Var, w: &ConvParams) -> Result<Var> {
        let k = tape.param(&self.store, w.kernel);
        let b = tape.param(&self.store, w.bias);
        tape.conv2d(x, k, Some(b), Conv2dParams::same())
    }

    fn run_level(&self, tape: &mut Tape<T>, level: &Level, x: Var, emb: Var) -> Result<Var> {
        let t = self.conv(tape, emb, &level.time_proj)?;
        let mut h = tape.add(x, t)?;
        for b in &level.blocks {
            h = c2f_block(tape, &self.store, b, h)?;
        }
        Ok(h)
    }

    /// Records the clean-image estimate `x̂₀ = degraded + residual` on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        y_t: Var,
        degraded: Var,
        steps: &[usize],
    ) -> Result<Var> {
        const OP: &str = "unet_forward";
        let s = tape.shape(y_t);
        if s != tape.shape(degraded) {
            return Err(Error::ShapeMismatch {
                op: OP,
                lhs: s,
                rhs: tape.shape(degraded),
            });
        }
        if s.c != self.spec.image_channels {
            return Err(Error::shape(
                OP,
                format!(
                    "expected {} image channels, got {}",
                    self.spec.image_channels, s.c
                ),
            ));
        }
        let m = self.spec.spatial_multiple();
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) || s.h == 0 || s.w == 0 {
            return Err(Error::shape(
                OP,
                format!("spatial dims {}x{} not divisible by {m}", s.h, s.w),
            ));
        }
        if steps.len() != s.n {
            return Err(Error::arg(
                OP,
                format!("{} step indices for batch of {}", steps.len(), s.n),
            ));
        }

        let emb = tape.constant(timestep_embedding(steps, self.spec.time_embed_dim));
        let emb = self.conv(tape, emb, &self.time_fc)?;
        let emb = tape.simple_gate(emb)?;

        let input = tape.concat(&[y_t, degraded])?;
        let mut h = self.conv(tape, input, &self.intro)?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        for (level, down) in self.encoders.iter().zip(&self.downs) {
            h = self.run_level(tape, level, h, emb)?;
            skips.push(h);
            let pooled = tape.interp2x_down(h)?;
            h = self.conv(tape, pooled, down)?;
        }
        h = self.run_level(tape, &self.middle, h, emb)?;
        for (level, up) in self.decoders.iter().zip(&self.ups) {
            let narrowed = self.conv(tape, h, up)?;
            let upsampled = tape.interp2x_up(narrowed)?;
            let skip = skips.pop().expect("one skip per level");
            let merged = tape.add(upsampled, skip)?;
            h = self.run_level(tape, level, merged, emb)?;
        }
        let residual = self.conv(tape, h, &self.head)?;
        tape.add(degraded, residual)
    }

    /// Clean-image estimate for plain tensors.
    pub fn predict_clean(
        &self,
        y_t: &Tensor<T>,
        degraded: &Tensor<T>,
        steps: &[usize],
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let y = tape.constant(y_t.clone());
        let d = tape.constant(degraded.clone());
        let out = self.forward(&mut tape, y, d, steps)?;
        Ok(tape.value(out).clone())
    }

    /// Predicted noise field `ζ̂`, one step index per batch item.
    pub fn predict_noise(
        &self,
        schedule: &SdeSchedule,
        y_t: &Tensor<T>,
        degraded: &Tensor<T>,
        steps: &[usize],
    ) -> Result<Tensor<T>> {
        if let Some(&t) = steps.iter().find(|&&t| t == 0 || t > schedule.steps()) {
            return Err(Error::arg(
                "unet_forward",
                format!("step {t} outside [1, {}]", schedule.steps()),
            ));
        }
        let clean = self.predict_clean(y_t, degraded, steps)?;
        let noise: Vec<Tensor<T>> = steps
            .iter()
            .enumerate()
            .map(|(n, &t)| {
                sde::noise_from_clean(
                    schedule,
                    &y_t.batch_item(n),
                    &clean.batch_item(n),
                    &degraded.batch_item(n),
                    t,
                )
            })
            .collect::<Result<_>>()?;
        Tensor::stack(&noise)
    }

    /// Score `−ζ̂/σ_t` at a single step for the whole batch.
    pub fn score(
        &self,
        schedule: &SdeSchedule,
        y_t: &Tensor<T>,
        degraded: &Tensor<T>,
        t: usize,
    ) -> Result<Tensor<T>> {
        let steps = vec![t; y_t.shape().n];
        let noise = self.predict_noise(schedule, y_t, degraded, &steps)?;
        sde::score_from_noise(schedule, &noise, t)
    }

    /// Rebuilds the network around an existing parameter store (e.g. from a checkpoint).
    pub fn with_params(spec: NetworkSpec, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        if params.len() != net.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                net.store.len(),
                params.len()
            )));
        }
        for (id, name, value) in net.store.clone().iter() {
            let src = params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let v = params.get(src).clone();
            if v.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {} but network expects {}",
                    v.shape(),
                    value.shape()
                )));
            }
            net.store.set(id, v)?;
        }
        Ok(net)
    }
}
