//! Pixel, edge and colour-histogram fidelity terms and their weighted sum.
//!
//! The exact edge and histogram terms are piecewise constant, so training uses
//! the smooth stand-ins in [`surrogate`]; the exact values are what reports show.

pub mod canny;
pub mod surrogate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use canny::{canny, CannyParams, EdgeMap};
pub use surrogate::{soft_surrogates, surrogate_terms, SurrogateTerms, WeightSource};

pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Train the weights as `softplus(ρ)` alongside the network.
    pub learned: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.1,
            learned: false,
        }
    }
}

impl LossWeights {
    pub fn fixed(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            lambda3,
            learned: false,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.as_array();
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::arg(
                "loss_weights",
                "weights must be finite and non-negative",
            ));
        }
        if l.iter().all(|v| *v == 0.0) {
            return Err(Error::arg(
                "loss_weights",
                "at least one weight must be positive",
            ));
        }
        Ok(())
    }

    /// `λ₁·pixel + λ₂·edge + λ₃·hist`, always evaluated in this order.
    pub fn combine(&self, pixel: f64, edge: f64, hist: f64) -> f64 {
        self.lambda1 * pixel + self.lambda2 * edge + self.lambda3 * hist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pixel: f64,
    pub edge: f64,
    pub hist: f64,
    pub combined: f64,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn new(pixel: f64, edge: f64, hist: f64, weights: LossWeights) -> Self {
        Self {
            pixel,
            edge,
            hist,
            combined: weights.combine(pixel, edge, hist),
            weights,
        }
    }

    /// True when `combined` equals the weighted sum of the fields bit for bit.
    pub fn is_consistent(&self) -> bool {
        self.weights
            .combine(self.pixel, self.edge, self.hist)
            .to_bits()
            == self.combined.to_bits()
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn pixel_loss<T: Scalar>(gen: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape("pixel_loss", gen, gt)?;
    let total: f64 = gen
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
        .sum();
    Ok(total / gen.numel() as f64)
}

/// Normalized `bins`-bin histogram of one channel of batch item `n`.
/// Values are clamped to `[0, 1]`; `1.0` lands in the last bin.
pub fn histogram<T: Scalar>(
    image: &Tensor<T>,
    n: usize,
    channel: usize,
    bins: usize,
) -> Result<Vec<f64>> {
    let s = image.shape();
    if bins == 0 {
        return Err(Error::arg("histogram", "bin count must be positive"));
    }
    if channel >= s.c || n >= s.n {
        return Err(Error::arg(
            "histogram",
            format!("no item {n} channel {channel} in {s}"),
        ));
    }
    let mut counts = vec![0usize; bins];
    let start = n * s.item() + channel * s.plane();
    for v in &image.data()[start..start + s.plane()] {
        let v = v.to_f64_lossy().clamp(0.0, 1.0);
        counts[((v * bins as f64).floor() as usize).min(bins - 1)] += 1;
    }
    let total = s.plane() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Sum over channels of the L1 distance between normalized histograms,
/// averaged over the batch.
pub fn hist_loss<T: Scalar>(gen: &Tensor<T>, gt: &Tensor<T>, bins: usize) -> Result<f64> {
    same_shape("hist_loss", gen, gt)?;
    let s = gen.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let (a, b) = (histogram(gen, n, c, bins)?, histogram(gt, n, c, bins)?);
            total += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
    }
    Ok(total / s.n as f64)
}

/// Fraction of pixels where the Canny maps disagree, averaged over the batch.
pub fn edge_loss<T: Scalar>(gen: &Tensor<T>, gt: &Tensor<T>, params: &CannyParams) -> Result<f64> {
    same_shape("edge_loss", gen, gt)?;
    let s = gen.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        let (a, b) = (canny(gen, n, params)?, canny(gt, n, params)?);
        let diff = a.edges.iter().zip(&b.edges).filter(|(x, y)| x != y).count();
        total += diff as f64 / s.plane() as f64;
    }
    Ok(total / s.n as f64)
}

pub fn combined_loss<T: Scalar>(
    gen: &Tensor<T>,
    gt: &Tensor<T>,
    weights: &LossWeights,
    params: &CannyParams,
    bins: usize,
) -> Result<LossReport> {
    weights.validate()?;
    Ok(LossReport::new(
        pixel_loss(gen, gt)?,
        edge_loss(gen, gt, params)?,
        hist_loss(gen, gt, bins)?,
        *weights,
    ))
}
