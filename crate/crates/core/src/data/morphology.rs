//! Binary morphology on `[C, H, W]` masks.
//!
//! Positions outside the image never contribute: dilation treats them as
//! background and erosion ignores them. With a symmetric element this keeps
//! `erode(dilate(m)) ⊇ m` and `dilate(erode(m)) ⊆ m` true up to the border.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Offsets `(dy, dx)` relative to the center pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Element {
    pub offsets: Vec<(isize, isize)>,
}

impl Element {
    /// 3×3 cross: the center and its four edge neighbors.
    pub fn cross3() -> Self {
        Self {
            offsets: vec![(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)],
        }
    }

    pub fn square3() -> Self {
        Self {
            offsets: (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx))).collect(),
        }
    }
}

pub(crate) fn check_binary<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::InvalidTarget(format!("{what} is not binary")))
    }
}

fn filter<T: Scalar>(mask: &Tensor<T>, element: &Element, iters: usize, grow: bool) -> Result<Tensor<T>> {
    check_binary(mask, "mask")?;
    let (c, h, w) = match *mask.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        ref s => return Err(Error::InvalidShape(format!("morphology needs [C,H,W], got {s:?}"))),
    };
    let mut cur = mask.data().to_vec();
    for _ in 0..iters {
        let mut next = vec![T::zero(); cur.len()];
        for p in 0..c {
            let plane = &cur[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut hit = !grow;
                    for &(dy, dx) in &element.offsets {
                        let (sy, sx) = (y as isize + dy, x as isize + dx);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let on = plane[sy as usize * w + sx as usize] == T::one();
                        if grow && on {
                            hit = true;
                            break;
                        }
                        if !grow && !on {
                            hit = false;
                            break;
                        }
                    }
                    if hit {
                        next[(p * h + y) * w + x] = T::one();
                    }
                }
            }
        }
        cur = next;
    }
    Tensor::from_vec(mask.shape(), cur)
}

pub fn dilate<T: Scalar>(mask: &Tensor<T>, element: &Element, iters: usize) -> Result<Tensor<T>> {
    filter(mask, element, iters, true)
}

pub fn erode<T: Scalar>(mask: &Tensor<T>, element: &Element, iters: usize) -> Result<Tensor<T>> {
    filter(mask, element, iters, false)
}
