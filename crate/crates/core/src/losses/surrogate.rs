//! Differentiable stand-ins for the edge and histogram terms.
//!
//! Edge: L1 between Gaussian-smoothed Sobel magnitudes of the luminance.
//! Histogram: L1 between soft histograms with triangular one-bin kernels.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::canny::{gaussian_taps, CannyParams, LUMA, SOBEL_NORM};
use crate::losses::LossWeights;
use crate::ops::{Conv2dParams, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Keeps `sqrt` smooth where the gradient vanishes.
pub const MAGNITUDE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct SurrogateTerms {
    pub pixel: Var,
    pub edge: Var,
    pub hist: Var,
}

/// Where the λ's come from when forming the weighted sum on a tape.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource {
    Fixed(LossWeights),
    /// Already-positive scalar vars (e.g. `softplus(ρ)`).
    Vars([Var; 3]),
}

fn luminance_var<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    match tape.shape(x).c {
        1 => Ok(x),
        3 => {
            let k = Tensor::from_vec(
                Shape::new(1, 3, 1, 1),
                LUMA.iter().map(|&v| T::lit(v)).collect(),
            )?;
            let k = tape.constant(k);
            tape.conv2d(x, k, None, Conv2dParams::default())
        }
        c => Err(Error::shape(
            "luminance",
            format!("expected 1 or 3 channels, got {c}"),
        )),
    }
}

/// Smoothed gradient magnitude `N×1×H×W`, zero-padded at the borders.
pub fn edge_magnitude<T: Scalar>(tape: &mut Tape<T>, x: Var, params: &CannyParams) -> Result<Var> {
    params.validate()?;
    let lum = luminance_var(tape, x)?;
    let r = params.radius();
    let taps = gaussian_taps(params.sigma, r);
    let side = 2 * r + 1;
    let g = Tensor::from_fn(Shape::new(1, 1, side, side), |_, _, y, x| {
        T::lit(taps[y] * taps[x])
    });
    let g = tape.constant(g);
    let blurred = tape.conv2d(lum, g, None, Conv2dParams::default())?;

    const SX: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    const SY: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let sobel = Tensor::from_vec(
        Shape::new(2, 1, 3, 3),
        SX.iter().chain(SY.iter()).map(|&v| T::lit(v)).collect(),
    )?;
    let sobel = tape.constant(sobel);
    let grads = tape.conv2d(blurred, sobel, None, Conv2dParams::default())?;
    let sq = tape.square(grads)?;
    // Channel mean of (gx², gy²) is half their sum.
    let half = tape.pool(PoolKind::SpatialAvg, sq)?;
    let scaled = tape.affine(half, 2.0 / (SOBEL_NORM * SOBEL_NORM), 0.0)?;
    tape.sqrt_eps(scaled, MAGNITUDE_EPS)
}

fn check_pair<T: Scalar>(tape: &Tape<T>, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "surrogate",
            lhs: tape.shape(a),
            rhs: tape.shape(b),
        });
    }
    Ok(())
}

/// Pixel MAE plus both surrogates, each a scalar var.
pub fn surrogate_terms<T: Scalar>(
    tape: &mut Tape<T>,
    gen: Var,
    gt: Var,
    params: &CannyParams,
    bins: usize,
) -> Result<SurrogateTerms> {
    check_pair(tape, gen, gt)?;
    let n = tape.shape(gen).n as f64;

    let d = tape.sub(gen, gt)?;
    let d = tape.abs(d)?;
    let pixel = tape.mean(d)?;

    let ma = edge_magnitude(tape, gen, params)?;
    let mb = edge_magnitude(tape, gt, params)?;
    let d = tape.sub(ma, mb)?;
    let d = tape.abs(d)?;
    let edge = tape.mean(d)?;

    let ha = tape.soft_histogram(gen, bins)?;
    let hb = tape.soft_histogram(gt, bins)?;
    let d = tape.sub(ha, hb)?;
    let d = tape.abs(d)?;
    let total = tape.sum(d)?;
    let hist = tape.affine(total, 1.0 / n, 0.0)?;

    Ok(SurrogateTerms { pixel, edge, hist })
}

/// `λ₁·pixel + λ₂·edge + λ₃·hist` on the tape.
pub fn weighted_sum<T: Scalar>(
    tape: &mut Tape<T>,
    terms: &SurrogateTerms,
    weights: WeightSource,
) -> Result<Var> {
    let parts = [terms.pixel, terms.edge, terms.hist];
    let scaled: Vec<Var> = match weights {
        WeightSource::Fixed(w) => parts
            .iter()
            .zip(w.as_array())
            .map(|(&p, l)| tape.affine(p, l, 0.0))
            .collect::<Result<_>>()?,
        WeightSource::Vars(l) => parts
            .iter()
            .zip(l)
            .map(|(&p, l)| tape.mul(p, l))
            .collect::<Result<_>>()?,
    };
    let s = tape.add(scaled[0], scaled[1])?;
    tape.add(s, scaled[2])
}

/// Evaluates the two surrogates on a throwaway tape: `(edge, hist)`.
pub fn soft_surrogates<T: Scalar>(
    gen: &Tensor<T>,
    gt: &Tensor<T>,
    params: &CannyParams,
    bins: usize,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let a = tape.constant(gen.clone());
    let b = tape.constant(gt.clone());
    let t = surrogate_terms(&mut tape, a, b, params, bins)?;
    Ok((
        tape.value(t.edge).item()?.to_f64_lossy(),
        tape.value(t.hist).item()?.to_f64_lossy(),
    ))
}
