//! 2-D cross-correlation with stride, zero padding and channel groups.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn depthwise(stride: usize, padding: usize, channels: usize) -> Self {
        Self {
            stride,
            padding,
            groups: channels,
        }
    }

    /// `floor((size + 2*padding - kernel) / stride) + 1`, or `None` when
    /// the kernel does not fit.
    pub fn output_extent(&self, size: usize, kernel: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        if padded < kernel || self.stride == 0 {
            None
        } else {
            Some((padded - kernel) / self.stride + 1)
        }
    }
}

struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    oh: usize,
    ow: usize,
    groups: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.k * self.k
    }
}

/// Unfolds the channel block `c0..c0+cin_g` of one image into
/// `[cin_g*k*k, oh*ow]` columns.
fn im2col<T: Scalar>(g: &Geometry, img: &[T], c0: usize, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.padding as isize);
    let ohw = g.oh * g.ow;
    for c in 0..g.cin_g() {
        let plane = &img[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * ohw..][..ohw];
                for oy in 0..g.oh {
                    let iy = (oy * s + ki) as isize - p;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into the image gradient.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], c0: usize, img: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.padding as isize);
    let ohw = g.oh * g.ow;
    for c in 0..g.cin_g() {
        let plane = &mut img[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * ohw..][..ohw];
                for oy in 0..g.oh {
                    let iy = (oy * s + ki) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<Geometry> {
    if x.len() != 4 || w.len() != 4 || w[2] != w[3] {
        return Err(Error::ShapeMismatch(format!("conv2d input {x:?} with weight {w:?}")));
    }
    let groups = spec.groups.max(1);
    let (n, c_in, h, wd) = (x[0], x[1], x[2], x[3]);
    let (c_out, k) = (w[0], w[2]);
    if c_in % groups != 0 || c_out % groups != 0 || w[1] * groups != c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input {x:?} with weight {w:?} and {groups} groups"
        )));
    }
    let (Some(oh), Some(ow)) = (spec.output_extent(h, k), spec.output_extent(wd, k)) else {
        return Err(Error::InvalidShape(format!(
            "conv2d kernel {k} stride {} padding {} does not fit {h}x{wd}",
            spec.stride, spec.padding
        )));
    };
    Ok(Geometry {
        n,
        c_in,
        h,
        w: wd,
        c_out,
        k,
        oh,
        ow,
        groups,
        stride: spec.stride,
        padding: spec.padding,
    })
}

/// `x: [N,C_in,H,W]`, `weight: [C_out, C_in/groups, k, k]`, `bias: [C_out]`.
pub fn conv2d<T: Scalar>(tape: &Tape<T>, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
    let (xv, wv) = (tape.value(x), tape.value(weight));
    let g = geometry(xv.shape(), wv.shape(), spec)?;
    let bv = match bias {
        Some(b) => {
            let bv = tape.value(b);
            if bv.shape() != [g.c_out] {
                return Err(Error::ShapeMismatch(format!("conv2d bias {:?} for {} outputs", bv.shape(), g.c_out)));
            }
            Some(bv)
        }
        None => None,
    };
    let ohw = g.oh * g.ow;
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let mut out = vec![T::zero(); g.n * g.c_out * ohw];
    let mut cols = vec![T::zero(); patch * ohw];
    for n in 0..g.n {
        let img = &xv.data()[n * g.c_in * g.h * g.w..(n + 1) * g.c_in * g.h * g.w];
        for grp in 0..g.groups {
            im2col(&g, img, grp * cin_g, &mut cols);
            let wg = &wv.data()[grp * cout_g * patch..(grp + 1) * cout_g * patch];
            let dst = &mut out[(n * g.c_out + grp * cout_g) * ohw..][..cout_g * ohw];
            gemm(false, false, cout_g, patch, ohw, wg, &cols, T::zero(), dst);
        }
        if let Some(bv) = &bv {
            for (co, &b) in bv.data().iter().enumerate() {
                out[(n * g.c_out + co) * ohw..][..ohw].iter_mut().for_each(|v| *v += b);
            }
        }
    }
    let value = Tensor::from_parts(vec![g.n, g.c_out, g.oh, g.ow], out);
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    let has_bias = bias.is_some();
    Ok(tape.record(
        &inputs,
        value,
        Box::new(move |grad| {
            let gd = grad.data();
            let mut dx = vec![T::zero(); xv.numel()];
            let mut dw = vec![T::zero(); wv.numel()];
            let mut cols = vec![T::zero(); patch * ohw];
            let mut dcols = vec![T::zero(); patch * ohw];
            for n in 0..g.n {
                let img = &xv.data()[n * g.c_in * g.h * g.w..(n + 1) * g.c_in * g.h * g.w];
                let dimg = &mut dx[n * g.c_in * g.h * g.w..(n + 1) * g.c_in * g.h * g.w];
                for grp in 0..g.groups {
                    let go = &gd[(n * g.c_out + grp * cout_g) * ohw..][..cout_g * ohw];
                    im2col(&g, img, grp * cin_g, &mut cols);
                    let dwg = &mut dw[grp * cout_g * patch..(grp + 1) * cout_g * patch];
                    gemm(false, true, cout_g, ohw, patch, go, &cols, T::one(), dwg);
                    let wg = &wv.data()[grp * cout_g * patch..(grp + 1) * cout_g * patch];
                    gemm(true, false, patch, cout_g, ohw, wg, go, T::zero(), &mut dcols);
                    col2im(&g, &dcols, grp * cin_g, dimg);
                }
            }
            let mut grads = vec![
                Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
                Some(Tensor::from_parts(wv.shape().to_vec(), dw)),
            ];
            if has_bias {
                let mut db = vec![T::zero(); g.c_out];
                for n in 0..g.n {
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += gd[(n * g.c_out + co) * ohw..][..ohw].iter().copied().sum::<T>();
                    }
                }
                grads.push(Some(Tensor::from_parts(vec![g.c_out], db)));
            }
            grads
        }),
    ))
}
