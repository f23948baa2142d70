//! Full-reference quality metrics: PSNR and SSIM.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::losses::canny::{gaussian_taps, luminance, Plane};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check("mse", a, b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(total / a.numel() as f64)
}

/// `10·log10(peak²/MSE)`; `f64::INFINITY` for identical inputs.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::arg("psnr", "peak must be positive"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Gaussian-weighted moving average over valid `SSIM_WINDOW` windows.
fn filter_valid(p: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM map of two luminance planes.
pub fn ssim_plane(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::shape("ssim", "plane sizes differ"));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!(
                "{}x{} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                a.height, a.width
            ),
        ));
    }
    let (h, w) = (a.height, a.width);
    let taps = gaussian_taps(SSIM_SIGMA, SSIM_WINDOW / 2);
    let c1 = (K1 * peak).powi(2);
    let c2 = (K2 * peak).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect()
    };
    let mu_a = filter_valid(&a.data, h, w, &taps);
    let mu_b = filter_valid(&b.data, h, w, &taps);
    let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| ssim_local(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2))
        .sum();
    Ok(total / n as f64)
}

/// SSIM of one window from its weighted first and second moments.
pub fn ssim_local(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64, c1: f64, c2: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// SSIM on luminance, averaged over the batch.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    check("ssim", a, b)?;
    let n = a.shape().n;
    let mut total = 0.0;
    for i in 0..n {
        total += ssim_plane(&luminance(a, i)?, &luminance(b, i)?, peak)?;
    }
    Ok(total / n as f64)
}

/// PSNR value that serializes `+inf` as the string `"+inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr(pub f64);

impl Psnr {
    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("+inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr(v)),
            Raw::Text(s) if s == "+inf" => Ok(Psnr(f64::INFINITY)),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "unexpected psnr value {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub reference: String,
    pub candidate: String,
}

impl MetricReport {
    pub fn compute<T: Scalar>(
        reference: &Tensor<T>,
        candidate: &Tensor<T>,
        reference_id: impl Into<String>,
        candidate_id: impl Into<String>,
    ) -> Result<Self> {
        Ok(Self {
            psnr_db: Psnr(psnr(reference, candidate, 1.0)?),
            ssim: ssim(reference, candidate, 1.0)?,
            reference: reference_id.into(),
            candidate: candidate_id.into(),
        })
    }
}
