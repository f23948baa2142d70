//! Seeded synthetic scenes and paired degradations.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ppm::save_ppm;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// A clean scene: smooth two-colour gradient background with a few
/// rectangles and discs. Values stay within `[0.05, 0.95]`.
pub fn synthetic_scene<T: Scalar>(height: usize, width: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color =
        |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(0.1..0.9)) };
    let c0 = color(&mut rng);
    let c1 = color(&mut rng);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());

    let shapes: Vec<(bool, [f64; 4], [f64; 3])> = (0..rng.random_range(2..=4))
        .map(|_| {
            let disc = rng.random_bool(0.5);
            let geom = [
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(0.15..0.4) * height as f64,
                rng.random_range(0.15..0.4) * width as f64,
            ];
            (disc, geom, color(&mut rng))
        })
        .collect();

    let mut img = Tensor::from_fn(Shape::new(1, 3, height, width), |_, c, y, x| {
        let u = (y as f64 + 0.5) / height as f64 - 0.5;
        let v = (x as f64 + 0.5) / width as f64 - 0.5;
        let s = (u * sa + v * ca + 0.71) / 1.42;
        T::lit(c0[c] * (1.0 - s) + c1[c] * s)
    });
    for (disc, [cy, cx, ry, rx], col) in &shapes {
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let inside = if *disc {
                    (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
                } else {
                    dy.abs() <= *ry && dx.abs() <= *rx
                };
                if inside {
                    for (c, v) in col.iter().enumerate() {
                        img.set(0, c, y, x, T::lit(*v));
                    }
                }
            }
        }
    }
    img.map(|v| v.max(T::lit(0.05)).min(T::lit(0.95)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationTag {
    Lowlight,
    Haze,
    Rain,
}

impl DegradationTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DegradationTag::Lowlight => "lowlight",
            DegradationTag::Haze => "haze",
            DegradationTag::Rain => "rain",
        }
    }
}

/// A (degraded, reference) pair; both `1×3×H×W` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair<T> {
    pub degraded: Tensor<T>,
    pub reference: Tensor<T>,
    pub tag: DegradationTag,
    pub seed: u64,
}

impl<T: Scalar> ImagePair<T> {
    fn new(degraded: Tensor<T>, reference: &Tensor<T>, tag: DegradationTag, seed: u64) -> Self {
        Self {
            degraded: degraded.clamp01(),
            reference: reference.clamp01(),
            tag,
            seed,
        }
    }

    /// `<tag>_<seed>_deg.ppm` and `<tag>_<seed>_ref.ppm` inside `dir`.
    pub fn file_names(&self, dir: &Path) -> (PathBuf, PathBuf) {
        let stem = format!("{}_{}", self.tag.as_str(), self.seed);
        (
            dir.join(format!("{stem}_deg.ppm")),
            dir.join(format!("{stem}_ref.ppm")),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let (d, r) = self.file_names(dir);
        save_ppm(&d, &self.degraded)?;
        save_ppm(&r, &self.reference)?;
        Ok((d, r))
    }
}

/// `clamp((gain·img)^gamma + N(0, noise_std²))`.
pub fn degrade_lowlight<T: Scalar>(
    img: &Tensor<T>,
    gain: f64,
    gamma: f64,
    noise_std: f64,
    seed: u64,
) -> Result<ImagePair<T>> {
    if !(gain > 0.0 && gain <= 1.0) || !(gamma >= 1.0) || !(noise_std >= 0.0) {
        return Err(Error::arg(
            "degrade_lowlight",
            "need 0 < gain ≤ 1, gamma ≥ 1, noise_std ≥ 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = img.clamp01();
    let mut out = clean.map(|v| T::lit((gain * v.to_f64_lossy()).powf(gamma)));
    if noise_std > 0.0 {
        for v in out.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += T::lit(noise_std * z);
        }
    }
    Ok(ImagePair::new(out, &clean, DegradationTag::Lowlight, seed))
}

/// Atmospheric scattering without clamping: `J·t + A·(1−t)`.
pub fn haze_model<T: Scalar>(img: &Tensor<T>, transmission: f64, airlight: f64) -> Tensor<T> {
    img.map(|j| T::lit(j.to_f64_lossy() * transmission + airlight * (1.0 - transmission)))
}

pub fn degrade_haze<T: Scalar>(
    img: &Tensor<T>,
    transmission: f64,
    airlight: f64,
    seed: u64,
) -> Result<ImagePair<T>> {
    if !(0.0..=1.0).contains(&transmission) || !(0.0..=1.0).contains(&airlight) {
        return Err(Error::arg(
            "degrade_haze",
            "transmission and airlight must lie in [0, 1]",
        ));
    }
    let clean = img.clamp01();
    Ok(ImagePair::new(
        haze_model(&clean, transmission, airlight),
        &clean,
        DegradationTag::Haze,
        seed,
    ))
}

/// Additive streak layer (same on every channel), before clamping.
pub fn rain_layer<T: Scalar>(
    shape: Shape,
    streak_count: usize,
    angle_deg: f64,
    intensity: f64,
    seed: u64,
) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Tensor::<T>::zeros(Shape::new(1, 1, shape.h, shape.w));
    let (dy, dx) = {
        let a = angle_deg.to_radians();
        (a.cos(), a.sin())
    };
    let span = shape.h.max(shape.w) as f64;
    for _ in 0..streak_count {
        let y0 = rng.random_range(0.0..shape.h as f64);
        let x0 = rng.random_range(0.0..shape.w as f64);
        let len = rng.random_range(0.25..0.6) * span;
        let strength = intensity * rng.random_range(0.6..1.0);
        let steps = (len * 2.0).ceil() as usize;
        let mut last = None;
        for k in 0..=steps {
            let s = len * k as f64 / steps as f64;
            let (y, x) = ((y0 + s * dy).floor(), (x0 + s * dx).floor());
            if y < 0.0 || x < 0.0 || y >= shape.h as f64 || x >= shape.w as f64 {
                continue;
            }
            let p = (y as usize, x as usize);
            if last == Some(p) {
                continue;
            }
            last = Some(p);
            let v = layer.at(0, 0, p.0, p.1);
            layer.set(0, 0, p.0, p.1, v + T::lit(strength));
        }
    }
    layer
}

pub fn degrade_rain<T: Scalar>(
    img: &Tensor<T>,
    streak_count: usize,
    angle_deg: f64,
    intensity: f64,
    seed: u64,
) -> Result<ImagePair<T>> {
    if !(intensity >= 0.0) || !angle_deg.is_finite() {
        return Err(Error::arg(
            "degrade_rain",
            "intensity must be non-negative and angle finite",
        ));
    }
    let clean = img.clamp01();
    let s = clean.shape();
    let layer = rain_layer::<T>(s, streak_count, angle_deg, intensity, seed);
    let out = Tensor::from_fn(s, |n, c, y, x| clean.at(n, c, y, x) + layer.at(0, 0, y, x));
    Ok(ImagePair::new(out, &clean, DegradationTag::Rain, seed))
}

/// Degradation recipe with its parameters, as stored in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Degradation {
    Lowlight {
        gain: f64,
        gamma: f64,
        noise_std: f64,
    },
    Haze {
        transmission: f64,
        airlight: f64,
    },
    Rain {
        streak_count: usize,
        angle_deg: f64,
        intensity: f64,
    },
}

impl Default for Degradation {
    fn default() -> Self {
        Degradation::Lowlight {
            gain: 0.6,
            gamma: 1.4,
            noise_std: 0.01,
        }
    }
}

impl Degradation {
    pub fn tag(&self) -> DegradationTag {
        match self {
            Degradation::Lowlight { .. } => DegradationTag::Lowlight,
            Degradation::Haze { .. } => DegradationTag::Haze,
            Degradation::Rain { .. } => DegradationTag::Rain,
        }
    }

    pub fn apply<T: Scalar>(&self, img: &Tensor<T>, seed: u64) -> Result<ImagePair<T>> {
        match *self {
            Degradation::Lowlight {
                gain,
                gamma,
                noise_std,
            } => degrade_lowlight(img, gain, gamma, noise_std, seed),
            Degradation::Haze {
                transmission,
                airlight,
            } => degrade_haze(img, transmission, airlight, seed),
            Degradation::Rain {
                streak_count,
                angle_deg,
                intensity,
            } => degrade_rain(img, streak_count, angle_deg, intensity, seed),
        }
    }

    /// Scene for `seed`, then this degradation with the same seed.
    pub fn generate<T: Scalar>(&self, size: usize, seed: u64) -> Result<ImagePair<T>> {
        self.apply(&synthetic_scene(size, size, seed), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = synthetic_scene::<f64>(16, 16, 4);
        assert_eq!(a, synthetic_scene::<f64>(16, 16, 4));
        assert_ne!(a, synthetic_scene::<f64>(16, 16, 5));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn lowlight_identity_parameters() {
        let img = synthetic_scene::<f64>(8, 8, 1);
        let p = degrade_lowlight(&img, 1.0, 1.0, 0.0, 3).unwrap();
        assert_eq!(p.degraded, img);
    }

    #[test]
    fn haze_extremes() {
        let img = synthetic_scene::<f64>(8, 8, 1);
        assert_eq!(degrade_haze(&img, 1.0, 0.7, 0).unwrap().degraded, img);
        let p = degrade_haze(&img, 0.0, 0.7, 0).unwrap();
        assert!(p.degraded.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn rain_without_streaks_is_identity() {
        let img = synthetic_scene::<f64>(8, 8, 1);
        assert_eq!(degrade_rain(&img, 0, 10.0, 0.5, 2).unwrap().degraded, img);
    }

    #[test]
    fn file_naming() {
        let img = synthetic_scene::<f64>(4, 4, 1);
        let p = degrade_haze(&img, 0.5, 0.5, 17).unwrap();
        let (d, r) = p.file_names(Path::new("out"));
        assert_eq!(d, Path::new("out/haze_17_deg.ppm"));
        assert_eq!(r, Path::new("out/haze_17_ref.ppm"));
    }
}
