//! Differentiable primitives: products, elementwise arithmetic, reductions
//! and reindexing.

use std::rc::Rc;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::{cast, gemm, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Right-hand operand of [`Tape::ewise`].
#[derive(Clone, Copy, Debug)]
pub enum Rhs {
    /// Same shape as the left operand.
    Var(Var),
    Scalar(f64),
    /// One value per index of `axis`, broadcast over every other axis.
    Channel { var: Var, axis: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn permute_data<T: Copy>(shape: &[usize], data: &[T], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // Stride in the input for each output axis.
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<T: Scalar> Tape<T> {
    /// Matrix product of `[m,k]·[k,n]`, or batched `[B,m,k]·[B,k,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let (batch, m, k, n) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1]),
            (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (sa[0], sa[1], sa[2], sb[2]),
            _ => return Err(Error::ShapeMismatch(format!("matmul {sa:?} by {sb:?}"))),
        };
        let mut out = vec![T::zero(); batch * m * n];
        for p in 0..batch {
            gemm(
                false,
                false,
                m,
                k,
                n,
                &av.data()[p * m * k..],
                &bv.data()[p * k * n..],
                T::zero(),
                &mut out[p * m * n..],
            );
        }
        let out_shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let (a_shape, b_shape) = (sa.to_vec(), sb.to_vec());
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.record(
            &[a, b],
            value,
            Box::new(move |g| {
                let g = g.data();
                let mut da = vec![T::zero(); batch * m * k];
                let mut db = vec![T::zero(); batch * k * n];
                for p in 0..batch {
                    let gp = &g[p * m * n..];
                    gemm(false, true, m, n, k, gp, &bv.data()[p * k * n..], T::zero(), &mut da[p * m * k..]);
                    gemm(true, false, k, m, n, &av.data()[p * m * k..], gp, T::zero(), &mut db[p * k * n..]);
                }
                vec![
                    Some(Tensor::from_parts(a_shape, da)),
                    Some(Tensor::from_parts(b_shape, db)),
                ]
            }),
        ))
    }

    /// Elementwise arithmetic with an equal-shape, scalar or per-channel operand.
    pub fn ewise(&self, op: EwiseOp, a: Var, rhs: Rhs) -> Result<Var> {
        match rhs {
            Rhs::Var(b) => self.ewise_same(op, a, b),
            Rhs::Scalar(s) => self.ewise_scalar(op, a, cast(s)),
            Rhs::Channel { var, axis } => self.ewise_channel(op, a, var, axis),
        }
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.ewise_same(EwiseOp::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.ewise_same(EwiseOp::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.ewise_same(EwiseOp::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.ewise_same(EwiseOp::Div, a, b)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.ewise_scalar(EwiseOp::Add, a, cast(s)).expect("scalar add is infallible")
    }

    pub fn mul_scalar(&self, a: Var, s: f64) -> Var {
        self.ewise_scalar(EwiseOp::Mul, a, cast(s)).expect("scalar mul is infallible")
    }

    /// `s - a`.
    pub fn rsub_scalar(&self, s: f64, a: Var) -> Var {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, s)
    }

    fn ewise_same(&self, op: EwiseOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch(format!(
                "elementwise {op:?} of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let shape = av.shape().to_vec();
        let data = match op {
            EwiseOp::Add => zip_map(av.data(), bv.data(), |x, y| x + y),
            EwiseOp::Sub => zip_map(av.data(), bv.data(), |x, y| x - y),
            EwiseOp::Mul => zip_map(av.data(), bv.data(), |x, y| x * y),
            EwiseOp::Div => zip_map(av.data(), bv.data(), |x, y| x / y),
        };
        let value = Tensor::from_parts(shape.clone(), data);
        Ok(self.record(
            &[a, b],
            value,
            Box::new(move |g| {
                let gd = g.data();
                let (da, db) = match op {
                    EwiseOp::Add => (gd.to_vec(), gd.to_vec()),
                    EwiseOp::Sub => (gd.to_vec(), gd.iter().map(|&x| -x).collect()),
                    EwiseOp::Mul => (zip_map(gd, bv.data(), |g, y| g * y), zip_map(gd, av.data(), |g, x| g * x)),
                    EwiseOp::Div => {
                        let da = zip_map(gd, bv.data(), |g, y| g / y);
                        let db = gd
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&g, (&x, &y))| -g * x / (y * y))
                            .collect();
                        (da, db)
                    }
                };
                vec![
                    Some(Tensor::from_parts(shape.clone(), da)),
                    Some(Tensor::from_parts(shape, db)),
                ]
            }),
        ))
    }

    fn ewise_scalar(&self, op: EwiseOp, a: Var, s: T) -> Result<Var> {
        let av = self.value(a);
        let value = match op {
            EwiseOp::Add => av.map(|x| x + s),
            EwiseOp::Sub => av.map(|x| x - s),
            EwiseOp::Mul => av.map(|x| x * s),
            EwiseOp::Div => av.map(|x| x / s),
        };
        Ok(self.record(
            &[a],
            value,
            Box::new(move |g| {
                let da = match op {
                    EwiseOp::Add | EwiseOp::Sub => g.clone(),
                    EwiseOp::Mul => g.map(|v| v * s),
                    EwiseOp::Div => g.map(|v| v / s),
                };
                vec![Some(da)]
            }),
        ))
    }

    fn ewise_channel(&self, op: EwiseOp, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = av.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis(format!("axis {axis} for rank {}", shape.len())));
        }
        if bv.shape() != [shape[axis]] {
            return Err(Error::ShapeMismatch(format!(
                "channel operand {:?} against axis {axis} of {shape:?}",
                bv.shape()
            )));
        }
        if op == EwiseOp::Div {
            return Err(Error::ShapeMismatch("channel broadcast supports add, sub and mul".into()));
        }
        let (outer, ch, inner) = split_axis(&shape, axis);
        let mut out = av.data().to_vec();
        for o in 0..outer {
            for c in 0..ch {
                let bc = bv.data()[c];
                let row = &mut out[(o * ch + c) * inner..(o * ch + c + 1) * inner];
                match op {
                    EwiseOp::Add => row.iter_mut().for_each(|v| *v += bc),
                    EwiseOp::Sub => row.iter_mut().for_each(|v| *v -= bc),
                    _ => row.iter_mut().for_each(|v| *v *= bc),
                }
            }
        }
        let value = Tensor::from_parts(shape.clone(), out);
        Ok(self.record(
            &[a, b],
            value,
            Box::new(move |g| {
                let gd = g.data();
                let mut db = vec![T::zero(); ch];
                let da = match op {
                    EwiseOp::Add | EwiseOp::Sub => {
                        let sign = if op == EwiseOp::Add { T::one() } else { -T::one() };
                        for o in 0..outer {
                            for (c, dbc) in db.iter_mut().enumerate() {
                                let s: T = gd[(o * ch + c) * inner..(o * ch + c + 1) * inner].iter().copied().sum();
                                *dbc += sign * s;
                            }
                        }
                        gd.to_vec()
                    }
                    _ => {
                        let mut da = vec![T::zero(); gd.len()];
                        let ad = av.data();
                        for o in 0..outer {
                            for c in 0..ch {
                                let bc = bv.data()[c];
                                let base = (o * ch + c) * inner;
                                let mut acc = T::zero();
                                for i in base..base + inner {
                                    da[i] = gd[i] * bc;
                                    acc += gd[i] * ad[i];
                                }
                                db[c] += acc;
                            }
                        }
                        da
                    }
                };
                vec![
                    Some(Tensor::from_parts(shape, da)),
                    Some(Tensor::from_parts(vec![ch], db)),
                ]
            }),
        ))
    }

    /// Sum or mean over `axes`; reduced axes are dropped, a full reduction
    /// yields shape `[1]`.
    pub fn reduce(&self, op: ReduceOp, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::InvalidAxis(format!("axis {a} for rank {}", shape.len())));
            }
            if reduced[a] {
                return Err(Error::InvalidAxis(format!("axis {a} listed twice")));
            }
            reduced[a] = true;
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let count: usize = shape.iter().zip(&reduced).filter(|(_, &r)| r).map(|(&d, _)| d).product();
        // Output flat index for every input position.
        let kept_strides = {
            let mut s = vec![0usize; shape.len()];
            let mut acc = 1;
            for i in (0..shape.len()).rev() {
                if !reduced[i] {
                    s[i] = acc;
                    acc *= shape[i];
                }
            }
            s
        };
        let in_strides = strides(&shape);
        let target: Rc<Vec<usize>> = Rc::new(
            (0..xv.numel())
                .map(|flat| {
                    let mut o = 0;
                    for ax in 0..shape.len() {
                        o += (flat / in_strides[ax]) % shape[ax] * kept_strides[ax];
                    }
                    o
                })
                .collect(),
        );
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); out_len];
        for (v, &t) in xv.data().iter().zip(target.iter()) {
            out[t] += *v;
        }
        let scale: T = match op {
            ReduceOp::Sum => T::one(),
            ReduceOp::Mean => T::one() / cast(count as f64),
        };
        if op == ReduceOp::Mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.record(
            &[x],
            value,
            Box::new(move |g| {
                let gd = g.data();
                let dx = target.iter().map(|&t| gd[t] * scale).collect();
                vec![Some(Tensor::from_parts(shape, dx))]
            }),
        ))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(ReduceOp::Sum, x, &axes).expect("full reduction is valid")
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(ReduceOp::Mean, x, &axes).expect("full reduction is valid")
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let value = xv.reshaped(shape)?;
        let in_shape = xv.shape().to_vec();
        drop(xv);
        Ok(self.record(
            &[x],
            value,
            Box::new(move |g| vec![Some(Tensor::from_parts(in_shape, g.data().to_vec()))]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidShape(format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let (out_shape, out) = permute_data(xv.shape(), xv.data(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        drop(xv);
        Ok(self.record(
            &[x],
            Tensor::from_parts(out_shape, out),
            Box::new(move |g| {
                let (s, d) = permute_data(g.shape(), g.data(), &inverse);
                vec![Some(Tensor::from_parts(s, d))]
            }),
        ))
    }

    /// Stacks `[N,C1,H,W]` and `[N,C2,H,W]` into `[N,C1+C2,H,W]`.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::ShapeMismatch(format!("concat {sa:?} with {sb:?}")));
        }
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let hw = sa[2] * sa[3];
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv.data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let value = Tensor::from_parts(vec![n, ca + cb, sa[2], sa[3]], out);
        Ok(self.record(
            &[a, b],
            value,
            Box::new(move |g| {
                let gd = g.data();
                let mut da = Vec::with_capacity(n * ca * hw);
                let mut db = Vec::with_capacity(n * cb * hw);
                for i in 0..n {
                    let base = i * (ca + cb) * hw;
                    da.extend_from_slice(&gd[base..base + ca * hw]);
                    db.extend_from_slice(&gd[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![
                    Some(Tensor::from_parts(sa, da)),
                    Some(Tensor::from_parts(sb, db)),
                ]
            }),
        ))
    }

    /// Channels `start..start+len` of an `[N,C,H,W]` tensor.
    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() != 4 || len == 0 || start + len > s[1] {
            return Err(Error::InvalidShape(format!("channel slice {start}+{len} of {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let mut out = Vec::with_capacity(n * len * hw);
        for i in 0..n {
            let base = (i * c + start) * hw;
            out.extend_from_slice(&xv.data()[base..base + len * hw]);
        }
        drop(xv);
        let value = Tensor::from_parts(vec![n, len, s[2], s[3]], out);
        Ok(self.record(
            &[x],
            value,
            Box::new(move |g| {
                let mut dx = vec![T::zero(); n * c * hw];
                for i in 0..n {
                    let base = (i * c + start) * hw;
                    dx[base..base + len * hw].copy_from_slice(&g.data()[i * len * hw..(i + 1) * len * hw]);
                }
                vec![Some(Tensor::from_parts(s, dx))]
            }),
        ))
    }
}
