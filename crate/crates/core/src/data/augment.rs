//! Random flips, scaling, 90° rotation and mask dilation/erosion.
//!
//! Randomness is drawn once into an [`AugmentPlan`]; applying the plan is
//! deterministic, so image and mask receive identical geometry.

use crate::data::morphology::{dilate, erode, Element};
use crate::data::resize::{resize_image, resize_mask};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const APPLY_PROB: f64 = 0.5;
pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Morph {
    Dilate(usize),
    Erode(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    pub scale: Option<f64>,
    /// Counter-clockwise quarter turns, 1 to 3.
    pub rot90: Option<usize>,
    pub morph: Option<Morph>,
}

impl AugmentPlan {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn draw(rng: &mut SeededRng) -> Self {
        let hflip = rng.bernoulli(APPLY_PROB);
        let vflip = rng.bernoulli(APPLY_PROB);
        let scale = rng
            .bernoulli(APPLY_PROB)
            .then(|| rng.uniform_range(SCALE_RANGE.0, SCALE_RANGE.1));
        let rot90 = rng.bernoulli(APPLY_PROB).then(|| 1 + rng.below(3));
        let morph = rng.bernoulli(APPLY_PROB).then(|| {
            let iters = 1 + rng.below(2);
            if rng.bernoulli(0.5) {
                Morph::Dilate(iters)
            } else {
                Morph::Erode(iters)
            }
        });
        Self {
            hflip,
            vflip,
            scale,
            rot90,
            morph,
        }
    }

    fn geometry<T: Scalar>(&self, t: &Tensor<T>, is_mask: bool) -> Result<Tensor<T>> {
        let mut t = t.clone();
        if self.hflip {
            t = flip(&t, false)?;
        }
        if self.vflip {
            t = flip(&t, true)?;
        }
        if let Some(u) = self.scale {
            t = scale_about_center(&t, u, is_mask)?;
        }
        if let Some(k) = self.rot90 {
            t = rot90(&t, k)?;
        }
        Ok(t)
    }

    pub fn apply_image<T: Scalar>(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.geometry(image, false)
    }

    pub fn apply_mask<T: Scalar>(&self, mask: &Tensor<T>) -> Result<Tensor<T>> {
        let m = self.geometry(mask, true)?;
        match self.morph {
            Some(Morph::Dilate(n)) => dilate(&m, &Element::cross3(), n),
            Some(Morph::Erode(n)) => erode(&m, &Element::cross3(), n),
            None => Ok(m),
        }
    }

    pub fn apply(&self, s: &Sample) -> Result<Sample> {
        Ok(Sample {
            image: self.apply_image(&s.image)?,
            mask: self.apply_mask(&s.mask)?,
            id: s.id.clone(),
        })
    }
}

pub fn augment(s: &Sample, rng: &mut SeededRng) -> Result<Sample> {
    AugmentPlan::draw(rng).apply(s)
}

fn chw<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape(format!("expected [C,H,W], got {s:?}"))),
    }
}

/// Mirrors columns, or rows when `vertical`.
pub fn flip<T: Scalar>(t: &Tensor<T>, vertical: bool) -> Result<Tensor<T>> {
    let (c, h, w) = chw(t)?;
    let mut out = Vec::with_capacity(t.numel());
    for p in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            let row = &t.data()[(p * h + sy) * w..][..w];
            if vertical {
                out.extend_from_slice(row);
            } else {
                out.extend(row.iter().rev());
            }
        }
    }
    Tensor::from_vec(t.shape(), out)
}

/// `k` counter-clockwise quarter turns; odd `k` swaps height and width.
pub fn rot90<T: Scalar>(t: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let mut cur = t.clone();
    for _ in 0..k % 4 {
        let (c, h, w) = chw(&cur)?;
        let mut out = Vec::with_capacity(cur.numel());
        for p in 0..c {
            for y in 0..w {
                for x in 0..h {
                    out.push(cur.data()[(p * h + x) * w + (w - 1 - y)]);
                }
            }
        }
        cur = Tensor::from_vec(&[c, w, h], out)?;
    }
    Ok(cur)
}

/// Resizes by `u`, then center-crops or zero-pads back to the original size.
pub fn scale_about_center<T: Scalar>(t: &Tensor<T>, u: f64, is_mask: bool) -> Result<Tensor<T>> {
    let (c, h, w) = chw(t)?;
    let size = (((h as f64 * u).round() as usize).max(1), ((w as f64 * u).round() as usize).max(1));
    let scaled = if is_mask { resize_mask(t, size)? } else { resize_image(t, size)? };
    let (sh, sw) = size;
    let mut out = vec![T::zero(); c * h * w];
    // Offset of the original frame inside the scaled one (negative when padding).
    let oy = (sh as isize - h as isize) / 2;
    let ox = (sw as isize - w as isize) / 2;
    for p in 0..c {
        for y in 0..h {
            let sy = y as isize + oy;
            if sy < 0 || sy >= sh as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize + ox;
                if sx >= 0 && sx < sw as isize {
                    out[(p * h + y) * w + x] = scaled.data()[(p * sh + sy as usize) * sw + sx as usize];
                }
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}
