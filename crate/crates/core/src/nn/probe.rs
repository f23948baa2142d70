//! Empirical receptive fields by input perturbation.
//!
//! Global statistics (layer-norm moments, spatial means) are captured on an
//! unperturbed pass and replayed on every perturbed pass, so the probe measures
//! the spatially local computation only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::block::{coarse_branch, fine_branch, BlockSpec, CoarseWeights, FineWeights};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHANGE_THRESHOLD: f64 = 1e-12;

/// Input pixels that influence the centre output pixel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Footprint {
    pub height: usize,
    pub width: usize,
    /// Row-major `height × width` mask over input positions.
    pub mask: Vec<bool>,
    /// Bounding-box extent `(rows, cols)` of the mask.
    pub extent: (usize, usize),
    /// True when every pixel inside the bounding box is set.
    pub dense: bool,
}

impl Footprint {
    fn from_mask(height: usize, width: usize, mask: Vec<bool>) -> Self {
        let set: Vec<(usize, usize)> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / width, i % width))
            .collect();
        if set.is_empty() {
            return Self {
                height,
                width,
                mask,
                extent: (0, 0),
                dense: false,
            };
        }
        let (y0, y1) = (
            set.iter().map(|p| p.0).min().unwrap(),
            set.iter().map(|p| p.0).max().unwrap(),
        );
        let (x0, x1) = (
            set.iter().map(|p| p.1).min().unwrap(),
            set.iter().map(|p| p.1).max().unwrap(),
        );
        let extent = (y1 - y0 + 1, x1 - x0 + 1);
        Self {
            height,
            width,
            dense: set.len() == extent.0 * extent.1,
            mask,
            extent,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Side length when the footprint is a dense square, else `None`.
    pub fn square_side(&self) -> Option<usize> {
        (self.dense && self.extent.0 == self.extent.1).then_some(self.extent.0)
    }
}

/// Perturbs every input pixel (all channels, `+delta`) and marks those that
/// change any channel of the output at the spatial centre by more than
/// [`CHANGE_THRESHOLD`].
pub fn receptive_field_probe<T, F>(f: F, input: &Tensor<T>, delta: f64) -> Result<Footprint>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut fps = receptive_field_probe_many(|tape, x| Ok(vec![f(tape, x)?]), input, delta)?;
    Ok(fps.remove(0))
}

/// [`receptive_field_probe`] for several outputs of one computation.
pub fn receptive_field_probe_many<T, F>(
    f: F,
    input: &Tensor<T>,
    delta: f64,
) -> Result<Vec<Footprint>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Vec<Var>>,
{
    let s = input.shape();
    if s.n != 1 {
        return Err(Error::arg(
            "receptive_field_probe",
            "probe input must have batch size 1",
        ));
    }
    let mut tape = Tape::recording();
    let x = tape.constant(input.clone());
    let outs = f(&mut tape, x)?;
    let base: Vec<Tensor<T>> = outs.iter().map(|&o| tape.value(o).clone()).collect();
    let stats = tape.take_stats();

    let mut masks = vec![vec![false; s.plane()]; outs.len()];
    let mut work = input.clone();
    for y in 0..s.h {
        for xx in 0..s.w {
            for c in 0..s.c {
                let v = work.at(0, c, y, xx);
                work.set(0, c, y, xx, v + T::lit(delta));
            }
            let mut tape = Tape::replaying(stats.clone());
            let x = tape.constant(work.clone());
            let outs = f(&mut tape, x)?;
            for (k, (&o, b)) in outs.iter().zip(&base).enumerate() {
                let os = b.shape();
                let (cy, cx) = (os.h / 2, os.w / 2);
                masks[k][y * s.w + xx] = (0..os.c).any(|c| {
                    (tape.value(o).at(0, c, cy, cx) - b.at(0, c, cy, cx))
                        .abs()
                        .to_f64_lossy()
                        > CHANGE_THRESHOLD
                });
            }
            for c in 0..s.c {
                let v = input.at(0, c, y, xx);
                work.set(0, c, y, xx, v);
            }
        }
    }
    Ok(masks
        .into_iter()
        .map(|m| Footprint::from_mask(s.h, s.w, m))
        .collect())
}

/// Expected side of the cumulative footprint after the fine 3×3 and each dilated stage.
pub fn expected_ladder(dilations: [usize; 3]) -> [usize; 4] {
    let mut radius = 1;
    let mut out = [3; 4];
    for (i, d) in dilations.iter().enumerate() {
        radius += d;
        out[i + 1] = 2 * radius + 1;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    pub dilations: [usize; 3],
    /// Measured footprint side per stage (fine, then each coarse stage); 0 when not a dense square.
    pub measured: [usize; 4],
    pub extents: [(usize, usize); 4],
}

/// Probes the fine branch and the cumulative coarse stages of one block with
/// random weights.
pub fn receptive_field_ladder<T: Scalar>(
    channels: usize,
    dilations: [usize; 3],
    seed: u64,
) -> Result<LadderReport> {
    let mut spec = BlockSpec::new(channels);
    spec.dilations = dilations;
    spec.validate_structure()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<T>::new();
    let fine = FineWeights::init(&mut store, "probe", &spec, &mut rng)?;
    let coarse = CoarseWeights::init(&mut store, "probe", &spec, &mut rng)?;

    let radius = 1 + dilations.iter().sum::<usize>();
    let side = 2 * radius + 5;
    let input = Tensor::<T>::randn(Shape::new(1, channels, side, side), 1.0, &mut rng);

    let fps = receptive_field_probe_many(
        |tape, x| {
            let f = fine_branch(tape, &store, &spec, &fine, x)?;
            let [c1, c2, c3] = coarse_branch(tape, &store, &coarse, f)?;
            Ok(vec![f, c1, c2, c3])
        },
        &input,
        1.0,
    )?;
    let mut measured = [0; 4];
    let mut extents = [(0, 0); 4];
    for (stage, fp) in fps.iter().enumerate() {
        measured[stage] = fp.square_side().unwrap_or(0);
        extents[stage] = fp.extent;
    }
    Ok(LadderReport {
        dilations,
        measured,
        extents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_single_pixel_footprint() {
        let input = Tensor::<f64>::full(Shape::new(1, 2, 7, 7), 0.5);
        let fp = receptive_field_probe(|_, x| Ok(x), &input, 1.0).unwrap();
        assert_eq!(fp.square_side(), Some(1));
        assert!(fp.contains(3, 3));
    }

    #[test]
    fn ladder_arithmetic() {
        assert_eq!(expected_ladder([2, 4, 8]), [3, 7, 15, 31]);
        assert_eq!(expected_ladder([2, 4, 4]), [3, 7, 15, 23]);
    }

    #[test]
    fn measured_ladder_matches_dilations() {
        let r = receptive_field_ladder::<f64>(4, [2, 4, 8], 11).unwrap();
        assert_eq!(r.measured, [3, 7, 15, 31]);
        let r = receptive_field_ladder::<f64>(4, [2, 4, 4], 11).unwrap();
        assert_eq!(r.measured, [3, 7, 15, 23]);
    }
}
