//! Image (bilinear) and mask (nearest-neighbor) resizing of `[C, H, W]`.

use crate::error::{Error, Result};
use crate::nn::upsample::resize_planes;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims(t: &Tensor<impl Scalar>, size: (usize, usize)) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] if size.0 > 0 && size.1 > 0 => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape(format!("cannot resize {s:?} to {size:?}"))),
    }
}

/// Bilinear with half-pixel centers.
pub fn resize_image<T: Scalar>(t: &Tensor<T>, size: (usize, usize)) -> Result<Tensor<T>> {
    let (c, h, w) = dims(t, size)?;
    if (h, w) == size {
        return Ok(t.clone());
    }
    Tensor::from_vec(&[c, size.0, size.1], resize_planes(t.data(), c, h, w, size.0, size.1))
}

/// Nearest neighbor: output pixel `o` copies input `floor((o + 0.5)·in/out)`.
pub fn resize_mask<T: Scalar>(t: &Tensor<T>, size: (usize, usize)) -> Result<Tensor<T>> {
    let (c, h, w) = dims(t, size)?;
    let pick = |i: usize, n: usize, m: usize| (((i as f64 + 0.5) * n as f64 / m as f64) as usize).min(n - 1);
    let ys: Vec<usize> = (0..size.0).map(|y| pick(y, h, size.0)).collect();
    let xs: Vec<usize> = (0..size.1).map(|x| pick(x, w, size.1)).collect();
    let mut out = Vec::with_capacity(c * size.0 * size.1);
    for p in 0..c {
        for &y in &ys {
            out.extend(xs.iter().map(|&x| t.data()[(p * h + y) * w + x]));
        }
    }
    Tensor::from_vec(&[c, size.0, size.1], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;
    use proptest::prelude::*;

    #[test]
    fn own_size_and_constant() {
        let t = Tensor::<f64>::filled(&[3, 5, 7], Fill::Normal { seed: 1, std: 1.0 }).unwrap();
        assert_eq!(resize_image(&t, (5, 7)).unwrap().data(), t.data());
        assert_eq!(resize_mask(&t, (5, 7)).unwrap().data(), t.data());
        let c = Tensor::<f64>::filled(&[3, 5, 7], Fill::Value(0.3)).unwrap();
        for v in resize_image(&c, (11, 4)).unwrap().data() {
            assert!((v - 0.3).abs() < 1e-12);
        }
        assert!(resize_image(&c, (0, 4)).is_err());
    }

    #[test]
    fn nearest_doubling_repeats_pixels() {
        let t = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = resize_mask(&t, (4, 4)).unwrap();
        assert_eq!(r.data(), &[1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1.]);
    }

    proptest! {
        #[test]
        fn masks_stay_binary(bits in proptest::collection::vec(any::<bool>(), 36), oh in 1usize..20, ow in 1usize..20) {
            let t = Tensor::<f32>::from_vec(&[1, 6, 6], bits.iter().map(|&b| b as u8 as f32).collect()).unwrap();
            let r = resize_mask(&t, (oh, ow)).unwrap();
            prop_assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
