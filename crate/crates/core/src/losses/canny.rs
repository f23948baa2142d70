//! Canny edge detection on luminance.
//!
//! Gaussian blur (radius `⌈3σ⌉`, replicated borders) → Sobel gradients →
//! magnitude scaled so an ideal unit step reads 1.0 → non-maximum suppression
//! along four quantized directions → double threshold → hysteresis growth from
//! strong pixels through 8-connected weak ones. The one-pixel image border is
//! never marked.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// Sobel response to a unit step.
pub const SOBEL_NORM: f64 = 4.0;
/// Near-ties within this margin survive suppression on both sides.
const NMS_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    pub t_low: f64,
    pub t_high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            t_low: 0.1,
            t_high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::arg("canny", "sigma must be positive"));
        }
        if !(0.0 < self.t_low && self.t_low < self.t_high) {
            return Err(Error::arg(
                "canny",
                "thresholds must satisfy 0 < t_low < t_high",
            ));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Single-channel plane in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

/// Luminance of batch item `n`; single-channel images pass through.
pub fn luminance<T: Scalar>(image: &Tensor<T>, n: usize) -> Result<Plane> {
    let s = image.shape();
    let plane = s.plane();
    let item = &image.data()[n * s.item()..(n + 1) * s.item()];
    let data = match s.c {
        1 => item.iter().map(|v| v.to_f64_lossy()).collect(),
        3 => (0..plane)
            .map(|i| {
                (0..3)
                    .map(|c| LUMA[c] * item[c * plane + i].to_f64_lossy())
                    .sum()
            })
            .collect(),
        c => {
            return Err(Error::shape(
                "luminance",
                format!("expected 1 or 3 channels, got {c}"),
            ))
        }
    };
    Ok(Plane {
        height: s.h,
        width: s.w,
        data,
    })
}

/// Binary edge map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.edges[y * self.width + x]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 1, self.height, self.width), |_, _, y, x| {
            if self.get(y, x) {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

fn blur(p: &Plane, sigma: f64, radius: usize) -> Plane {
    let taps = gaussian_taps(sigma, radius);
    let r = radius as isize;
    let (h, w) = (p.height, p.width);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|i| taps[(i + r) as usize] * p.at_clamped(y as isize, x as isize + i))
                .sum();
        }
    }
    let tmp = Plane {
        height: h,
        width: w,
        data: tmp,
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|i| taps[(i + r) as usize] * tmp.at_clamped(y as isize + i, x as isize))
                .sum();
        }
    }
    Plane {
        height: h,
        width: w,
        data: out,
    }
}

/// Sobel `(gx, gy)` with replicated borders.
fn sobel(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (p.height, p.width);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = |dy: isize, dx: isize| p.at_clamped(y + dy, x + dx);
            let i = y as usize * w + x as usize;
            gx[i] = (v(-1, 1) - v(-1, -1)) + 2.0 * (v(0, 1) - v(0, -1)) + (v(1, 1) - v(1, -1));
            gy[i] = (v(1, -1) - v(-1, -1)) + 2.0 * (v(1, 0) - v(-1, 0)) + (v(1, 1) - v(-1, 1));
        }
    }
    (gx, gy)
}

/// Neighbour offsets `(dy, dx)` along the quantized gradient direction.
fn direction(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (0, 1)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

/// Gradient magnitude after blur, scaled by [`SOBEL_NORM`], plus raw gradients.
pub fn gradient_field(p: &Plane, params: &CannyParams) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let support = 2 * params.radius() + 1;
    if p.height < support || p.width < support {
        return Err(Error::shape(
            "canny",
            format!(
                "{}x{} image smaller than {support}x{support} kernel support",
                p.height, p.width
            ),
        ));
    }
    let blurred = blur(p, params.sigma, params.radius());
    let (gx, gy) = sobel(&blurred);
    let mag = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| a.hypot(*b) / SOBEL_NORM)
        .collect();
    Ok((mag, gx, gy))
}

pub fn non_maximum_suppression(
    h: usize,
    w: usize,
    mag: &[f64],
    gx: &[f64],
    gy: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let (dy, dx) = direction(gx[i], gy[i]);
            let a = mag[((y as isize + dy) as usize) * w + (x as isize + dx) as usize];
            let b = mag[((y as isize - dy) as usize) * w + (x as isize - dx) as usize];
            if mag[i] + NMS_TIE >= a && mag[i] + NMS_TIE >= b {
                out[i] = mag[i];
            }
        }
    }
    out
}

pub fn hysteresis(h: usize, w: usize, thinned: &[f64], t_low: f64, t_high: f64) -> Vec<bool> {
    let mut edges = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in thinned.iter().enumerate() {
        if m >= t_high {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thinned[j] >= t_low {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}

pub fn canny_plane(p: &Plane, params: &CannyParams) -> Result<EdgeMap> {
    let (mag, gx, gy) = gradient_field(p, params)?;
    let thinned = non_maximum_suppression(p.height, p.width, &mag, &gx, &gy);
    Ok(EdgeMap {
        height: p.height,
        width: p.width,
        edges: hysteresis(p.height, p.width, &thinned, params.t_low, params.t_high),
    })
}

/// Edge map of batch item `n` (RGB is reduced to luminance first).
pub fn canny<T: Scalar>(image: &Tensor<T>, n: usize, params: &CannyParams) -> Result<EdgeMap> {
    canny_plane(&luminance(image, n)?, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(size: usize, lo: usize, hi: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| {
            if (lo..hi).contains(&y) && (lo..hi).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Tensor::<f64>::full(Shape::new(1, 3, 12, 12), 0.4);
        assert_eq!(canny(&img, 0, &CannyParams::default()).unwrap().count(), 0);
    }

    #[test]
    fn square_gives_closed_contour() {
        let e = canny(&square(16, 4, 12), 0, &CannyParams::default()).unwrap();
        assert!(e.count() > 0);
        // Every row and column crossing the square hits the contour.
        for k in 5..11 {
            assert!((0..16).any(|x| e.get(k, x)));
            assert!((0..16).any(|y| e.get(y, k)));
        }
        // Nothing deep inside or far outside.
        assert!(!e.get(8, 8));
        assert!(!e.get(1, 1));
    }

    #[test]
    fn polarity_invariant() {
        let img = square(16, 4, 12);
        let inv = img.map(|v| 1.0 - v);
        let p = CannyParams::default();
        assert_eq!(canny(&img, 0, &p).unwrap(), canny(&inv, 0, &p).unwrap());
    }

    #[test]
    fn too_small_image_is_an_error() {
        let img = Tensor::<f64>::zeros(Shape::new(1, 1, 6, 6));
        assert!(canny(&img, 0, &CannyParams::default()).is_err());
    }
}
