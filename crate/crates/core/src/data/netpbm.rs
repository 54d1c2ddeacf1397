//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
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
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, format!("{what} out of range")))
    }
}

/// Decodes to `[C, H, W]` with `C = 1` for P5 and `C = 3` for P6, values
/// scaled to `[0, 1]`.
pub fn decode_netpbm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "expected magic P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(maxval_at, "zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(cur.pos, "expected whitespace before pixel data")),
    }
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::format(cur.pos, "image too large"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < n {
        return Err(Error::format(
            bytes.len(),
            format!("truncated pixel data: {} of {n} bytes", payload.len()),
        ));
    }
    let inv = 1.0 / 255.0;
    let mut data = vec![T::zero(); n];
    let plane = width * height;
    for (i, &b) in payload[..n].iter().enumerate() {
        let (px, ch) = (i / channels, i % channels);
        data[ch * plane + px] = cast(b as f64 * inv);
    }
    Tensor::from_vec(&[channels, height, width], data)
}

/// Encodes `[H, W]`, `[1, H, W]` (P5) or `[3, H, W]` (P6). Values are
/// clamped to `[0, 1]` and rounded to the nearest 8-bit level.
pub fn encode_netpbm<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let (channels, h, w) = match *t.shape() {
        [h, w] => (1, h, w),
        [c @ (1 | 3), h, w] => (c, h, w),
        ref s => return Err(Error::InvalidShape(format!("cannot encode {s:?} as netpbm"))),
    };
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(plane * channels);
    for px in 0..plane {
        for ch in 0..channels {
            let v = t.data()[ch * plane + px].to_f64_lossy();
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_netpbm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_netpbm(&read(path.as_ref())?)
}

pub fn save_netpbm<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_netpbm(t)?).map_err(|e| Error::io(path, e))
}

/// Loads a color image as `[3, H, W]`; grayscale files are replicated.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let t = load_netpbm::<T>(path)?;
    if t.shape()[0] == 3 {
        return Ok(t);
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    Tensor::from_vec(&[3, h, w], t.data().repeat(3))
}

/// Loads a mask as `[1, H, W]`, binarized at 128/255. Color files use the
/// first channel.
pub fn load_mask<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let t = load_netpbm::<f64>(path)?;
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let thr = 128.0 / 255.0 - 1e-9;
    let data = t.data()[..h * w].iter().map(|&v| if v >= thr { T::one() } else { T::zero() }).collect();
    Tensor::from_vec(&[1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_small_p5() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\xff\x00";
        let t: Tensor<f64> = decode_netpbm(bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn comments_do_not_change_p6() {
        let pixels: Vec<u8> = (0..18).map(|i| (i * 13) as u8).collect();
        let mut plain = b"P6\n3 2\n255\n".to_vec();
        plain.extend(&pixels);
        let mut commented = b"P6\n# made by hand\n3 # width\n2\n# maxval next\n255\n".to_vec();
        commented.extend(&pixels);
        let a: Tensor<f32> = decode_netpbm(&plain).unwrap();
        let b: Tensor<f32> = decode_netpbm(&commented).unwrap();
        assert_eq!(a.shape(), &[3, 2, 3]);
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data()[6], 13.0 / 255.0);
    }

    #[test]
    fn quantized_round_trip() {
        let t = Tensor::<f64>::from_vec(&[3, 4, 5], (0..60).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let back: Tensor<f64> = decode_netpbm(&encode_netpbm(&t).unwrap()).unwrap();
        assert!(t.max_abs_diff(&back) <= 1.0 / 255.0);
        let again: Tensor<f64> = decode_netpbm(&encode_netpbm(&back).unwrap()).unwrap();
        assert_eq!(back.data(), again.data());
    }

    #[test]
    fn errors_carry_offsets() {
        match decode_netpbm::<f32>(b"P3\n1 1\n255\n0") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_netpbm::<f32>(b"P5\n2 2\n255\n\x00\x01") {
            Err(Error::Format { offset: 13, msg }) => assert!(msg.contains("truncated")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_netpbm::<f32>(b"P5\n2 2\n65535\n"), Err(Error::Format { offset: 7, .. })));
        assert!(matches!(decode_netpbm::<f32>(b"P5\nx"), Err(Error::Format { offset: 3, .. })));
    }

    #[test]
    fn masks_binarize_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        std::fs::write(&path, b"P5\n4 1\n255\n\x00\x7f\x80\xff").unwrap();
        let m: Tensor<f32> = load_mask(&path).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0]);
        let img: Tensor<f32> = load_image(&path).unwrap();
        assert_eq!(img.shape(), &[3, 1, 4]);
        assert!(matches!(load_mask::<f32>(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }
}
