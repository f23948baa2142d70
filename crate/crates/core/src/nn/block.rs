//! Coarse-to-fine block: a 3×3 fine branch, a stacked grouped-dilated coarse
//! branch, and multi-attentional fusion of the two.
//!
//! ```text
//! fine    = SCA(SG(DWConv3×3(LN(α₁⊙x + β₁))))
//! f7      = g_{r=d₀}(fine),  f15 = g_{r=d₁}(f7),  f31 = g_{r=d₂}(f15)
//! W       = σ(Conv7×7[GAP_s, GMP_s](fine + f31) + MLP(GAP_c(fine + f31)))
//! fine'   = σ(Conv1×1(fine) ⊙ fine)
//! fused   = Conv1×1(fine'⊙W + f31⊙(1 − W))
//! out     = x + Conv1×1(SG(Conv1×1(LN(α₂⊙fused + β₂))))
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::init::{channel_vector, ConvParams};
use crate::ops::{Conv2dParams, Padding, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub const COARSE_DILATIONS: [usize; 3] = [2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub channels: usize,
    pub dilations: [usize; 3],
    pub ln_eps: f64,
    /// Channels per group in the coarse convolutions; 1 makes them depthwise.
    pub group_width: usize,
    /// Hidden width divisor of the channel-attention MLP.
    pub mlp_reduction: usize,
}

impl BlockSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            dilations: COARSE_DILATIONS,
            ln_eps: 1e-6,
            group_width: 4.min(channels.max(1)),
            mlp_reduction: 4,
        }
    }

    /// Checks everything except the dilation ladder.
    pub fn validate_structure(&self) -> Result<()> {
        const OP: &str = "BlockSpec";
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return Err(Error::arg(
                OP,
                format!("channels must be even and positive, got {}", self.channels),
            ));
        }
        if self.group_width == 0 || !self.channels.is_multiple_of(self.group_width) {
            return Err(Error::arg(
                OP,
                format!(
                    "group width {} must divide {} channels",
                    self.group_width, self.channels
                ),
            ));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::arg(OP, "ln_eps must be positive"));
        }
        if self.mlp_reduction == 0 {
            return Err(Error::arg(OP, "mlp_reduction must be positive"));
        }
        if self.dilations.contains(&0) {
            return Err(Error::arg(OP, "dilations must be positive"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.dilations != COARSE_DILATIONS {
            return Err(Error::arg(
                "BlockSpec",
                format!(
                    "dilations must be {COARSE_DILATIONS:?}, got {:?}",
                    self.dilations
                ),
            ));
        }
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.channels / self.group_width
    }

    fn hidden(&self) -> usize {
        (self.channels / self.mlp_reduction).max(1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FineWeights {
    pub alpha: ParamId,
    pub beta: ParamId,
    /// `2C×1×3×3`: doubles width so SimpleGate returns to `C`.
    pub dw: ConvParams,
    pub sca: ConvParams,
}

#[derive(Debug, Clone, Copy)]
pub struct CoarseWeights {
    pub stages: [ConvParams; 3],
    pub dilations: [usize; 3],
    pub groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MafcWeights {
    /// `1×2×7×7` over `[GAP_s, GMP_s]`.
    pub spatial: ConvParams,
    pub channel_fc1: ConvParams,
    pub channel_fc2: ConvParams,
    pub pixel: ConvParams,
    pub fuse: ConvParams,
}

#[derive(Debug, Clone, Copy)]
pub struct OutputWeights {
    pub alpha: ParamId,
    pub beta: ParamId,
    pub expand: ConvParams,
    pub project: ConvParams,
}

#[derive(Debug, Clone, Copy)]
pub struct C2fWeights {
    pub spec: BlockSpec,
    pub fine: FineWeights,
    pub coarse: CoarseWeights,
    pub mafc: MafcWeights,
    pub output: OutputWeights,
}

impl FineWeights {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: &BlockSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let c = spec.channels;
        Ok(Self {
            alpha: channel_vector(store, format!("{prefix}.alpha1"), c, 1.0)?,
            beta: channel_vector(store, format!("{prefix}.beta1"), c, 0.0)?,
            dw: ConvParams::new(
                store,
                &format!("{prefix}.dw"),
                Shape::new(2 * c, 1, 3, 3),
                1.0,
                rng,
            )?,
            sca: ConvParams::new(
                store,
                &format!("{prefix}.sca"),
                Shape::new(c, c, 1, 1),
                1.0,
                rng,
            )?,
        })
    }
}

impl CoarseWeights {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: &BlockSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let c = spec.channels;
        let mut stage = |i: usize, rng: &mut R| {
            ConvParams::new(
                store,
                &format!("{prefix}.coarse{i}"),
                Shape::new(c, spec.group_width, 3, 3),
                1.0,
                rng,
            )
        };
        let s0 = stage(0, rng)?;
        let s1 = stage(1, rng)?;
        let s2 = stage(2, rng)?;
        Ok(Self {
            stages: [s0, s1, s2],
            dilations: spec.dilations,
            groups: spec.groups(),
        })
    }
}

impl MafcWeights {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: &BlockSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let c = spec.channels;
        let h = spec.hidden();
        Ok(Self {
            spatial: ConvParams::new(
                store,
                &format!("{prefix}.mafc.spatial"),
                Shape::new(1, 2, 7, 7),
                1.0,
                rng,
            )?,
            channel_fc1: ConvParams::new(
                store,
                &format!("{prefix}.mafc.fc1"),
                Shape::new(h, c, 1, 1),
                1.0,
                rng,
            )?,
            channel_fc2: ConvParams::new(
                store,
                &format!("{prefix}.mafc.fc2"),
                Shape::new(c, h, 1, 1),
                1.0,
                rng,
            )?,
            pixel: ConvParams::new(
                store,
                &format!("{prefix}.mafc.pixel"),
                Shape::new(c, c, 1, 1),
                1.0,
                rng,
            )?,
            fuse: ConvParams::new(
                store,
                &format!("{prefix}.mafc.fuse"),
                Shape::new(c, c, 1, 1),
                1.0,
                rng,
            )?,
        })
    }
}

impl OutputWeights {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: &BlockSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let c = spec.channels;
        Ok(Self {
            alpha: channel_vector(store, format!("{prefix}.alpha2"), c, 1.0)?,
            beta: channel_vector(store, format!("{prefix}.beta2"), c, 0.0)?,
            expand: ConvParams::new(
                store,
                &format!("{prefix}.expand"),
                Shape::new(2 * c, c, 1, 1),
                1.0,
                rng,
            )?,
            project: ConvParams::new(
                store,
                &format!("{prefix}.project"),
                Shape::new(c, c, 1, 1),
                0.1,
                rng,
            )?,
        })
    }
}

impl C2fWeights {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: BlockSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate_structure()?;
        Ok(Self {
            spec,
            fine: FineWeights::init(store, prefix, &spec, rng)?,
            coarse: CoarseWeights::init(store, prefix, &spec, rng)?,
            mafc: MafcWeights::init(store, prefix, &spec, rng)?,
            output: OutputWeights::init(store, prefix, &spec, rng)?,
        })
    }
}

fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: &ConvParams,
    p: Conv2dParams,
) -> Result<Var> {
    let k = tape.param(store, w.kernel);
    let b = tape.param(store, w.bias);
    tape.conv2d(x, k, Some(b), p)
}

fn conv1x1<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: &ConvParams,
) -> Result<Var> {
    conv(tape, store, x, w, Conv2dParams::same())
}

fn check_channels<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    expect: usize,
    op: &'static str,
) -> Result<()> {
    let c = tape.shape(x).c;
    if c != expect {
        return Err(Error::shape(
            op,
            format!("expected {expect} channels, got {c}"),
        ));
    }
    if !c.is_multiple_of(2) {
        return Err(Error::arg(op, format!("odd channel count {c}")));
    }
    Ok(())
}

/// `SCA(SG(DWConv(LN(α₁⊙x + β₁))))`.
pub fn fine_branch<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    spec: &BlockSpec,
    w: &FineWeights,
    x: Var,
) -> Result<Var> {
    check_channels(tape, x, spec.channels, "fine_branch")?;
    let a = tape.param(store, w.alpha);
    let b = tape.param(store, w.beta);
    let scaled = tape.mul(x, a)?;
    let shifted = tape.add(scaled, b)?;
    let normed = tape.normalize(shifted, spec.ln_eps)?;
    let dk = tape.param(store, w.dw.kernel);
    let db = tape.param(store, w.dw.bias);
    let widened = tape.depthwise_conv2d(normed, dk, Some(db))?;
    let gated = tape.simple_gate(widened)?;
    let sk = tape.param(store, w.sca.kernel);
    let sb = tape.param(store, w.sca.bias);
    tape.sca(gated, sk, Some(sb))
}

/// The three stacked grouped-dilated 3×3 stages; returns every stage output.
pub fn coarse_branch<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    w: &CoarseWeights,
    f_fine: Var,
) -> Result<[Var; 3]> {
    let mut outs = [f_fine; 3];
    let mut cur = f_fine;
    for (i, stage) in w.stages.iter().enumerate() {
        cur = conv(
            tape,
            store,
            cur,
            stage,
            Conv2dParams {
                stride: 1,
                dilation: w.dilations[i],
                groups: w.groups,
                padding: Padding::Same,
            },
        )?;
        outs[i] = cur;
    }
    Ok(outs)
}

/// Intermediate maps of the fusion, exposed for inspection.
#[derive(Debug, Clone, Copy)]
pub struct MafcOutput {
    /// `W_C2F`, in `(0, 1)`.
    pub weight: Var,
    /// Pixel-attention refined fine features.
    pub fine_refined: Var,
    /// `fine'⊙W + coarse⊙(1 − W)` before the final 1×1.
    pub blended: Var,
    pub fused: Var,
}

pub fn mafc_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    w: &MafcWeights,
    f_fine: Var,
    f_coarse: Var,
) -> Result<MafcOutput> {
    if tape.shape(f_fine) != tape.shape(f_coarse) {
        return Err(Error::ShapeMismatch {
            op: "mafc_fuse",
            lhs: tape.shape(f_fine),
            rhs: tape.shape(f_coarse),
        });
    }
    let combined = tape.add(f_coarse, f_fine)?;

    let avg = tape.pool(PoolKind::SpatialAvg, combined)?;
    let max = tape.pool(PoolKind::SpatialMax, combined)?;
    let stacked = tape.concat(&[avg, max])?;
    let w_s = conv(tape, store, stacked, &w.spatial, Conv2dParams::same())?;

    let gap = tape.pool(PoolKind::ChannelAvg, combined)?;
    let hidden = conv1x1(tape, store, gap, &w.channel_fc1)?;
    let hidden = tape.relu(hidden)?;
    let w_c = conv1x1(tape, store, hidden, &w.channel_fc2)?;

    let logits = tape.add(w_s, w_c)?;
    let weight = tape.sigmoid(logits)?;

    let pix = conv1x1(tape, store, f_fine, &w.pixel)?;
    let pix = tape.mul(pix, f_fine)?;
    let fine_refined = tape.sigmoid(pix)?;

    let keep = tape.mul(fine_refined, weight)?;
    let inv = tape.one_minus(weight)?;
    let rest = tape.mul(f_coarse, inv)?;
    let blended = tape.add(keep, rest)?;
    let fused = conv1x1(tape, store, blended, &w.fuse)?;
    Ok(MafcOutput {
        weight,
        fine_refined,
        blended,
        fused,
    })
}

/// Output head applied to the fused map, without the residual.
pub fn block_output<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    spec: &BlockSpec,
    w: &OutputWeights,
    fused: Var,
) -> Result<Var> {
    let a = tape.param(store, w.alpha);
    let b = tape.param(store, w.beta);
    let scaled = tape.mul(fused, a)?;
    let shifted = tape.add(scaled, b)?;
    let normed = tape.normalize(shifted, spec.ln_eps)?;
    let wide = conv1x1(tape, store, normed, &w.expand)?;
    let gated = tape.simple_gate(wide)?;
    conv1x1(tape, store, gated, &w.project)
}

/// Full block with the residual connection; output shape equals input shape.
pub fn c2f_block<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    w: &C2fWeights,
    x: Var,
) -> Result<Var> {
    let fine = fine_branch(tape, store, &w.spec, &w.fine, x)?;
    let [_, _, coarse] = coarse_branch(tape, store, &w.coarse, fine)?;
    let fusion = mafc_fuse(tape, store, &w.mafc, fine, coarse)?;
    let out = block_output(tape, store, &w.spec, &w.output, fusion.fused)?;
    tape.add(x, out)
}
