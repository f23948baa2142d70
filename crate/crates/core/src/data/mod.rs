//! Image files and synthetic paired data.

pub mod ppm;
pub mod synth;

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use synth::{
    degrade_haze, degrade_lowlight, degrade_rain, haze_model, synthetic_scene, Degradation,
    DegradationTag, ImagePair,
};

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Loads a `.ppm` (or, with the `png` feature, `.png`) as `1×3×H×W` in `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    if is_png(path) {
        return png::load(path);
    }
    load_ppm(path)
}

pub fn save_image<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    if is_png(path) {
        return png::save(path, image);
    }
    save_ppm(path, image)
}

#[cfg(feature = "png")]
mod png {
    use super::*;
    use crate::tensor::Shape;

    pub fn load<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
        let img = image::open(path)
            .map_err(|e| Error::Format {
                path: Some(path.to_path_buf()),
                detail: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            T::lit(f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0)
        }))
    }

    pub fn save<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
        let bytes = encode_ppm(t)?;
        let rgb = decode_ppm::<f64>(&bytes)?;
        let s = rgb.shape();
        let img = image::RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
            image::Rgb(std::array::from_fn(|c| {
                (rgb.at(0, c, y as usize, x as usize) * 255.0).round() as u8
            }))
        });
        img.save(path).map_err(|e| Error::Format {
            path: Some(path.to_path_buf()),
            detail: e.to_string(),
        })
    }
}

#[cfg(not(feature = "png"))]
mod png {
    use super::*;

    fn unsupported(path: &Path) -> Error {
        Error::Format {
            path: Some(path.to_path_buf()),
            detail: "PNG support requires the `png` feature".into(),
        }
    }

    pub fn load<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
        Err(unsupported(path))
    }

    pub fn save<T: Scalar>(path: &Path, _: &Tensor<T>) -> Result<()> {
        Err(unsupported(path))
    }
}
