//! Per-position linear map over the channel axis.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Tape, Tensor, Var};

/// `y = W·x + b` at every position. Accepts `[N,C,H,W]` maps (channel axis 1)
/// or token tensors `[..., C]` (channel axis last). `weight: [C_out, C_in]`.
pub fn linear<T: Scalar>(tape: &Tape<T>, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let (xv, wv) = (tape.value(x), tape.value(weight));
    let ws = wv.shape();
    if ws.len() != 2 {
        return Err(Error::ShapeMismatch(format!("linear weight must be 2-D, got {ws:?}")));
    }
    let (c_out, c_in) = (ws[0], ws[1]);
    let xs = xv.shape().to_vec();
    let maps = xs.len() == 4;
    let ch = if maps { xs[1] } else { *xs.last().unwrap() };
    if ch != c_in {
        return Err(Error::ShapeMismatch(format!("linear {c_in}->{c_out} applied to {xs:?}")));
    }
    let bv = match bias {
        Some(b) => {
            let bv = tape.value(b);
            if bv.shape() != [c_out] {
                return Err(Error::ShapeMismatch(format!("linear bias {:?} for {c_out} outputs", bv.shape())));
            }
            Some(bv)
        }
        None => None,
    };
    let mut out_shape = xs.clone();
    let out = if maps {
        out_shape[1] = c_out;
        let (n, hw) = (xs[0], xs[2] * xs[3]);
        let mut out = vec![T::zero(); n * c_out * hw];
        for i in 0..n {
            let dst = &mut out[i * c_out * hw..(i + 1) * c_out * hw];
            gemm(false, false, c_out, c_in, hw, wv.data(), &xv.data()[i * c_in * hw..], T::zero(), dst);
            if let Some(bv) = &bv {
                for (co, &b) in bv.data().iter().enumerate() {
                    dst[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += b);
                }
            }
        }
        out
    } else {
        *out_shape.last_mut().unwrap() = c_out;
        let rows = xv.numel() / c_in;
        let mut out = vec![T::zero(); rows * c_out];
        gemm(false, true, rows, c_in, c_out, xv.data(), wv.data(), T::zero(), &mut out);
        if let Some(bv) = &bv {
            for row in out.chunks_mut(c_out) {
                row.iter_mut().zip(bv.data()).for_each(|(v, &b)| *v += b);
            }
        }
        out
    };
    let value = Tensor::from_parts(out_shape, out);
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    let has_bias = bias.is_some();
    Ok(tape.record(
        &inputs,
        value,
        Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); xv.numel()];
            let mut dw = vec![T::zero(); c_out * c_in];
            let mut db = vec![T::zero(); c_out];
            if maps {
                let (n, hw) = (xs[0], xs[2] * xs[3]);
                for i in 0..n {
                    let go = &gd[i * c_out * hw..(i + 1) * c_out * hw];
                    let xi = &xv.data()[i * c_in * hw..(i + 1) * c_in * hw];
                    gemm(true, false, c_in, c_out, hw, wv.data(), go, T::zero(), &mut dx[i * c_in * hw..]);
                    gemm(false, true, c_out, hw, c_in, go, xi, T::one(), &mut dw);
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += go[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
                    }
                }
            } else {
                let rows = xv.numel() / c_in;
                gemm(false, false, rows, c_out, c_in, gd, wv.data(), T::zero(), &mut dx);
                gemm(true, false, c_out, rows, c_in, gd, xv.data(), T::zero(), &mut dw);
                for row in gd.chunks(c_out) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
            }
            let mut grads = vec![
                Some(Tensor::from_parts(xs, dx)),
                Some(Tensor::from_parts(vec![c_out, c_in], dw)),
            ];
            if has_bias {
                grads.push(Some(Tensor::from_parts(vec![c_out], db)));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::{conv2d, ConvSpec};
    use crate::tensor::{grad_check_many, Coords, Fill};

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::filled(shape, Fill::Normal { seed, std: 1.0 }).unwrap()
    }

    #[test]
    fn identity_weight() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(rand(&[2, 3, 2, 2], 1));
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 4] = 1.0);
        let w = tape.constant(Tensor::from_vec(&[3, 3], eye).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]).unwrap());
        let y = linear(&tape, x, w, Some(b)).unwrap();
        assert_eq!(*tape.get(y), *tape.get(x));
    }

    #[test]
    fn row_of_ones_adds_channels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 2]).unwrap());
        let y = linear(&tape, x, w, None).unwrap();
        assert_eq!(tape.get(y).data(), &[3.0, 7.0, 11.0]);
    }

    #[test]
    fn equals_one_by_one_conv() {
        let tape = Tape::<f64>::new();
        let xv = rand(&[2, 4, 3, 5], 2);
        let wv = rand(&[3, 4], 3);
        let bv = rand(&[3], 4);
        let x = tape.constant(xv);
        let w = tape.constant(wv.clone());
        let b = tape.constant(bv);
        let y = linear(&tape, x, w, Some(b)).unwrap();
        let w4 = tape.constant(wv.reshaped(&[3, 4, 1, 1]).unwrap());
        let z = conv2d(&tape, x, w4, Some(b), ConvSpec::new(1, 0)).unwrap();
        assert!(tape.get(y).max_abs_diff(&tape.get(z)) < 1e-6);
    }

    #[test]
    fn tokens_and_maps_agree() {
        let tape = Tape::<f64>::new();
        let xm = tape.constant(rand(&[1, 4, 2, 3], 5));
        let tokens = tape.permute(tape.reshape(xm, &[1, 4, 6]).unwrap(), &[0, 2, 1]).unwrap();
        let w = tape.constant(rand(&[2, 4], 6));
        let ym = linear(&tape, xm, w, None).unwrap();
        let yt = linear(&tape, tokens, w, None).unwrap();
        let back = tape.reshape(tape.permute(yt, &[0, 2, 1]).unwrap(), &[1, 2, 2, 3]).unwrap();
        assert!(tape.get(ym).max_abs_diff(&tape.get(back)) < 1e-12);
    }

    #[test]
    fn channel_mismatch() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(rand(&[2, 5], 1));
        let w = tape.constant(rand(&[3, 4], 1));
        assert!(matches!(linear(&tape, x, w, None), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn gradcheck_maps_and_tokens() {
        for shape in [vec![2, 3, 2, 3], vec![2, 5, 3]] {
            let out_shape = if shape.len() == 4 { vec![2, 4, 2, 3] } else { vec![2, 5, 4] };
            let proj = rand(&out_shape, 9);
            let err = grad_check_many(
                |tape, v| {
                    let y = linear(tape, v[0], v[1], Some(v[2]))?;
                    let p = tape.constant(proj.clone());
                    Ok(tape.sum_all(tape.mul(y, p)?))
                },
                &[rand(&shape, 7), rand(&[4, 3], 8), rand(&[4], 10)],
                1e-6,
                Coords::All,
            )
            .unwrap();
            assert!(err < 1e-6, "{shape:?} {err}");
        }
    }
}
