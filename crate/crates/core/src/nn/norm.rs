//! Layer normalization and row softmax, both over the last axis.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalizes each row of the last axis to zero mean and unit variance,
/// then applies `gamma` and `beta` (both `[C]`).
pub fn layer_norm<T: Scalar>(tape: &Tape<T>, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let (xv, gv, bv) = (tape.value(x), tape.value(gamma), tape.value(beta));
    let c = *xv.shape().last().unwrap();
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "layer_norm over {c} channels with gamma {:?} beta {:?}",
            gv.shape(),
            bv.shape()
        )));
    }
    let rows = xv.numel() / c;
    let eps: T = cast(eps);
    let inv_c: T = cast(1.0 / c as f64);
    let mut xhat = vec![T::zero(); xv.numel()];
    let mut rstd = vec![T::zero(); rows];
    let mut out = vec![T::zero(); xv.numel()];
    for r in 0..rows {
        let row = &xv.data()[r * c..(r + 1) * c];
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gv.data()[j] + bv.data()[j];
        }
    }
    let shape = xv.shape().to_vec();
    drop(xv);
    let xhat = Rc::new(xhat);
    Ok(tape.record(
        &[x, gamma, beta],
        Tensor::from_parts(shape.clone(), out),
        Box::new(move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); gd.len()];
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            let mut dxhat = vec![T::zero(); c];
            for r in 0..rows {
                let gr = &gd[r * c..(r + 1) * c];
                let hr = &xhat[r * c..(r + 1) * c];
                let mut mean_d = T::zero();
                let mut mean_dh = T::zero();
                for j in 0..c {
                    dg[j] += gr[j] * hr[j];
                    db[j] += gr[j];
                    dxhat[j] = gr[j] * gv.data()[j];
                    mean_d += dxhat[j];
                    mean_dh += dxhat[j] * hr[j];
                }
                mean_d *= inv_c;
                mean_dh *= inv_c;
                for j in 0..c {
                    dx[r * c + j] = rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                }
            }
            vec![
                Some(Tensor::from_parts(shape, dx)),
                Some(Tensor::from_parts(vec![c], dg)),
                Some(Tensor::from_parts(vec![c], db)),
            ]
        }),
    ))
}

/// Softmax along the last axis, computed with the row max subtracted.
pub fn softmax_rows<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    let xv = tape.value(x);
    let n = *xv.shape().last().unwrap();
    let mut out = xv.data().to_vec();
    for row in out.chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    let shape = xv.shape().to_vec();
    drop(xv);
    let y = Rc::new(out.clone());
    tape.record(
        &[x],
        Tensor::from_parts(shape.clone(), out),
        Box::new(move |g| {
            let mut dx = vec![T::zero(); y.len()];
            for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.data().chunks(n)).zip(y.chunks(n)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::from_parts(shape, dx))]
        }),
    )
}
