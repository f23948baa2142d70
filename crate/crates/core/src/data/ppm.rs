//! Binary PPM (`P6`, maxval 255) with bit-exact 8-bit roundtrips.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn fmt_err(detail: impl Into<String>) -> Error {
    Error::Format {
        path: None,
        detail: detail.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(fmt_err(format!("missing {what} in PPM header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(format!("bad {what} in PPM header")))
    }
}

/// Parses a `P6` image into a `1×3×H×W` tensor with values `byte/255`.
pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if !bytes.starts_with(b"P6") {
        return Err(fmt_err("not a binary PPM (expected magic P6)"));
    }
    let mut hdr = Header { bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(fmt_err(format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(fmt_err("zero image dimension"));
    }
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        _ => return Err(fmt_err("missing whitespace after maxval")),
    }
    let plane = width * height;
    let body = &bytes[hdr.pos..];
    if body.len() < 3 * plane {
        return Err(fmt_err(format!(
            "truncated pixel data: need {} bytes, got {}",
            3 * plane,
            body.len()
        )));
    }
    let scale = T::lit(255.0);
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in body[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::lit(f64::from(px[c])) / scale;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, height, width), data)
}

/// Clamps to `[0, 1]`, rounds to 8 bits and writes `P6`. Accepts `1×3×H×W`
/// or `1×1×H×W` (replicated to grey RGB).
pub fn encode_ppm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) {
        return Err(Error::shape(
            "encode_ppm",
            format!("expected 1x3xHxW or 1x1xHxW, got {s}"),
        ));
    }
    image.ensure_finite("encode_ppm")?;
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let src = if s.c == 3 { c } else { 0 };
            let v = image.data()[src * plane + i].to_f64_lossy().clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_ppm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| e.with_path(path))
}

pub fn save_ppm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let bytes = encode_ppm(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_minimal_header() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153]);
        let t: Tensor<f64> = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2));
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert_eq!(t.at(0, 1, 0, 1), 1.0);
        assert_eq!(t.at(0, 2, 1, 1), 0.6);
    }

    #[test]
    fn comments_are_skipped() {
        let mut bytes = b"P6 # made by hand\n1 # w\n1\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        let t: Tensor<f64> = decode_ppm(&bytes).unwrap();
        assert_eq!(t.at(0, 2, 0, 0), 3.0 / 255.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_ppm::<f64>(b"P3\n1 1\n255\n\x00\x00\x00").is_err());
        assert!(decode_ppm::<f64>(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
        assert!(decode_ppm::<f64>(b"P6\n2 2\n255\n\x00\x00\x00").is_err());
        assert!(decode_ppm::<f64>(b"P6\n2\n").is_err());
    }

    #[test]
    fn out_of_range_values_clamp() {
        let t = Tensor::<f64>::from_vec(Shape::new(1, 3, 1, 1), vec![-0.5, 2.0, 0.5]).unwrap();
        let bytes = encode_ppm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 255, 128]);
    }
}
