//! Bilinear resampling with half-pixel centers (no corner alignment).
//!
//! Output pixel `o` samples input coordinate `(o + 0.5)·in/out − 0.5`,
//! clamped below at 0; the two neighbours are `floor` and `floor + 1`
//! (clamped to the last index).

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn taps<T: Scalar>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: cast(src - lo as f64),
            }
        })
        .collect()
}

/// Resamples every `h×w` plane of `data` to `oh×ow`.
pub(crate) fn resize_planes<T: Scalar>(data: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let top = src[y.lo * w + x.lo] * (T::one() - x.frac) + src[y.lo * w + x.hi] * x.frac;
                let bot = src[y.hi * w + x.lo] * (T::one() - x.frac) + src[y.hi * w + x.hi] * x.frac;
                dst[oy * ow + ox] = top * (T::one() - y.frac) + bot * y.frac;
            }
        }
    }
    out
}

fn resize_planes_adjoint<T: Scalar>(grad: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &grad[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (T::one() - y.frac);
                let bot = v * y.frac;
                dst[y.lo * w + x.lo] += top * (T::one() - x.frac);
                dst[y.lo * w + x.hi] += top * x.frac;
                dst[y.hi * w + x.lo] += bot * (T::one() - x.frac);
                dst[y.hi * w + x.hi] += bot * x.frac;
            }
        }
    }
    out
}

/// Resizes `[N,C,H,W]` to `[N,C,out_h,out_w]`.
pub fn bilinear_upsample<T: Scalar>(tape: &Tape<T>, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
    let xv = tape.value(x);
    let s = xv.shape().to_vec();
    if s.len() != 4 || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape(format!("bilinear resize of {s:?} to {out_h}x{out_w}")));
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    if (h, w) == (out_h, out_w) {
        drop(xv);
        return tape.reshape(x, &s);
    }
    let out = resize_planes(xv.data(), planes, h, w, out_h, out_w);
    drop(xv);
    Ok(tape.record(
        &[x],
        Tensor::from_parts(vec![s[0], s[1], out_h, out_w], out),
        Box::new(move |g| {
            let dx = resize_planes_adjoint(g.data(), planes, h, w, out_h, out_w);
            vec![Some(Tensor::from_parts(s, dx))]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Fill};

    /// Pointwise reference interpolator, written independently of the tap tables.
    fn sample(img: &[f64], h: usize, w: usize, oh: usize, ow: usize, oy: usize, ox: usize) -> f64 {
        let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let at = |y: usize, x: usize| img[y * w + x];
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
    }

    #[test]
    fn two_by_two_to_four_by_four_matches_reference() {
        let tape = Tape::<f64>::new();
        let src = [0.0, 1.0, 2.0, 3.0];
        let x = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], src.to_vec()).unwrap());
        let y = bilinear_upsample(&tape, x, 4, 4).unwrap();
        let got = tape.get(y).clone();
        for oy in 0..4 {
            for ox in 0..4 {
                let want = sample(&src, 2, 2, 4, 4, oy, ox);
                assert!((got.data()[oy * 4 + ox] - want).abs() < 1e-6);
            }
        }
        // First row: 0, 0.25, 0.75, 1.
        assert_eq!(&got.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn random_sizes_match_reference() {
        let x = Tensor::<f64>::filled(&[1, 1, 3, 5], Fill::Normal { seed: 4, std: 1.0 }).unwrap();
        for (oh, ow) in [(7, 4), (12, 20), (2, 2), (3, 5)] {
            let out = resize_planes(x.data(), 1, 3, 5, oh, ow);
            for oy in 0..oh {
                for ox in 0..ow {
                    assert!((out[oy * ow + ox] - sample(x.data(), 3, 5, oh, ow, oy, ox)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_and_identity() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::filled(&[1, 2, 3, 3], Fill::Value(0.7)).unwrap());
        let y = bilinear_upsample(&tape, c, 8, 5).unwrap();
        assert!(tape.get(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let r = tape.constant(Tensor::filled(&[1, 2, 3, 3], Fill::Normal { seed: 1, std: 1.0 }).unwrap());
        let same = bilinear_upsample(&tape, r, 3, 3).unwrap();
        assert_eq!(*tape.get(same), *tape.get(r));
    }

    #[test]
    fn adjoint_gradcheck() {
        let w = Tensor::filled(&[2, 1, 5, 7], Fill::Normal { seed: 3, std: 1.0 }).unwrap();
        let err = grad_check(
            |tape, x| {
                let y = bilinear_upsample(tape, x, 5, 7)?;
                let p = tape.constant(w.clone());
                Ok(tape.sum_all(tape.mul(y, p)?))
            },
            &Tensor::filled(&[2, 1, 2, 3], Fill::Normal { seed: 2, std: 1.0 }).unwrap(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_in_input() {
        let x = Tensor::<f32>::filled(&[1, 2, 3, 4], Fill::Normal { seed: 5, std: 1.0 }).unwrap();
        let y = Tensor::<f32>::filled(&[1, 2, 3, 4], Fill::Normal { seed: 6, std: 1.0 }).unwrap();
        let (a, b) = (1.7f32, -0.4f32);
        let mix: Vec<f32> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = resize_planes(&mix, 2, 3, 4, 9, 7);
        let fx = resize_planes(x.data(), 2, 3, 4, 9, 7);
        let fy = resize_planes(y.data(), 2, 3, 4, 9, 7);
        for i in 0..lhs.len() {
            assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-5);
        }
    }
}
