//! Four-stage pyramid Transformer encoder.
//!
//! Each stage embeds its input with an overlapping strided convolution,
//! runs `depth` pre-norm blocks of spatial-reduction attention and Mix-FFN
//! over the token grid, and reshapes the tokens back into a feature map.
//! There is no explicit positional encoding; spatial structure enters
//! through the embedding and the depthwise convolution inside Mix-FFN.

use crate::error::{Error, Result};
use crate::nn::{gelu, softmax_rows, Conv2d, ConvSpec, Init, Initializer, LayerNorm, Linear};
use crate::params::{Bound, ParamStore};
use crate::scalar::{cast, Scalar};
use crate::tensor::{Tape, Tensor, Var};

pub const PATCH_STRIDES: [usize; 4] = [4, 2, 2, 2];
pub const PATCH_KERNELS: [usize; 4] = [7, 3, 3, 3];

/// Product of the patch strides up to and including `stage` (0-based).
pub fn cumulative_stride(stage: usize) -> usize {
    PATCH_STRIDES[..=stage].iter().product()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stage_dims: [usize; 4],
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub sr_ratios: [usize; 4],
    pub ffn_expand: usize,
}

impl EncoderConfig {
    /// Desk-scale default.
    pub fn tiny() -> Self {
        Self {
            in_channels: 3,
            stage_dims: [16, 32, 64, 128],
            depths: [1, 1, 1, 1],
            heads: [1, 2, 4, 8],
            sr_ratios: [8, 4, 2, 1],
            ffn_expand: 4,
        }
    }

    pub fn small() -> Self {
        Self {
            in_channels: 3,
            stage_dims: [32, 64, 160, 256],
            depths: [2, 2, 2, 2],
            heads: [1, 2, 5, 8],
            sr_ratios: [8, 4, 2, 1],
            ffn_expand: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if self.stage_dims[i] == 0 || self.heads[i] == 0 || !self.stage_dims[i].is_multiple_of(self.heads[i]) {
                return Err(Error::InvalidShape(format!(
                    "stage {} dim {} not divisible by {} heads",
                    i + 1,
                    self.stage_dims[i],
                    self.heads[i]
                )));
            }
            if self.sr_ratios[i] == 0 {
                return Err(Error::InvalidShape(format!("stage {} has sr ratio 0", i + 1)));
            }
        }
        if self.ffn_expand == 0 || self.in_channels == 0 {
            return Err(Error::InvalidShape("ffn_expand and in_channels must be positive".into()));
        }
        Ok(())
    }
}

/// `[N,T,C]` tokens on an `h×w` grid to a `[N,C,h,w]` map.
pub fn tokens_to_map<T: Scalar>(tape: &Tape<T>, tokens: Var, h: usize, w: usize) -> Result<Var> {
    let s = tape.shape(tokens);
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::ShapeMismatch(format!("tokens {s:?} on a {h}x{w} grid")));
    }
    let t = tape.permute(tokens, &[0, 2, 1])?;
    tape.reshape(t, &[s[0], s[2], h, w])
}

/// `[N,C,h,w]` map to `[N,h·w,C]` tokens.
pub fn map_to_tokens<T: Scalar>(tape: &Tape<T>, map: Var) -> Result<Var> {
    let s = tape.shape(map);
    if s.len() != 4 {
        return Err(Error::ShapeMismatch(format!("expected a [N,C,H,W] map, got {s:?}")));
    }
    let flat = tape.reshape(map, &[s[0], s[1], s[2] * s[3]])?;
    tape.permute(flat, &[0, 2, 1])
}

/// `[N, T, heads·d]` to `[N·heads, T, d]`.
fn split_heads<T: Scalar>(tape: &Tape<T>, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x);
    let (n, t, c) = (s[0], s[1], s[2]);
    let r = tape.reshape(x, &[n, t, heads, c / heads])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    tape.reshape(p, &[n * heads, t, c / heads])
}

fn merge_heads<T: Scalar>(tape: &Tape<T>, x: Var, n: usize, heads: usize) -> Result<Var> {
    let s = tape.shape(x);
    let (t, d) = (s[1], s[2]);
    let r = tape.reshape(x, &[n, heads, t, d])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    tape.reshape(p, &[n, t, heads * d])
}

/// Overlapping patch embedding: strided convolution with
/// `padding = kernel / 2`, flattened to tokens and layer-normalized.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv: Conv2d,
    pub norm: LayerNorm,
    pub stride: usize,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let spec = ConvSpec::new(stride, kernel / 2);
        Self {
            conv: Conv2d::new(store, init, &format!("{name}.conv"), c_in, c_out, kernel, spec, Init::XavierNormal),
            norm: LayerNorm::new(store, &format!("{name}.norm"), c_out),
            stride,
        }
    }

    /// Returns tokens `[N, h·w, C]` and the grid `(h, w)`.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<(Var, usize, usize)> {
        let s = tape.shape(x);
        if s.len() != 4 || !s[2].is_multiple_of(self.stride) || !s[3].is_multiple_of(self.stride) {
            return Err(Error::InvalidShape(format!(
                "patch embedding with stride {} cannot tile input {s:?}",
                self.stride
            )));
        }
        let map = self.conv.forward(tape, p, x)?;
        let ms = tape.shape(map);
        let tokens = map_to_tokens(tape, map)?;
        Ok((self.norm.forward(tape, p, tokens)?, ms[2], ms[3]))
    }
}

/// Multi-head self-attention whose keys and values come from the token grid
/// reduced by an `sr×sr` stride-`sr` convolution plus layer norm.
#[derive(Clone, Debug)]
pub struct SrAttention {
    pub dim: usize,
    pub heads: usize,
    pub sr: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub reduce: Option<(Conv2d, LayerNorm)>,
}

impl SrAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        dim: usize,
        heads: usize,
        sr: usize,
    ) -> Self {
        let q = Linear::new(store, init, &format!("{name}.q"), dim, dim, Init::XavierNormal);
        let k = Linear::new(store, init, &format!("{name}.k"), dim, dim, Init::XavierNormal);
        let v = Linear::new(store, init, &format!("{name}.v"), dim, dim, Init::XavierNormal);
        let proj = Linear::new(store, init, &format!("{name}.proj"), dim, dim, Init::XavierNormal);
        let reduce = (sr > 1).then(|| {
            (
                Conv2d::new(store, init, &format!("{name}.sr"), dim, dim, sr, ConvSpec::new(sr, 0), Init::XavierNormal),
                LayerNorm::new(store, &format!("{name}.sr_norm"), dim),
            )
        });
        Self {
            dim,
            heads,
            sr,
            q,
            k,
            v,
            proj,
            reduce,
        }
    }

    /// Returns the attended tokens `[N,T,C]` and the attention weights
    /// `[N·heads, T, T_kv]`.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var, h: usize, w: usize) -> Result<(Var, Var)> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] != h * w || s[2] != self.dim {
            return Err(Error::InvalidShape(format!(
                "attention over {s:?} on a {h}x{w} grid with dim {}",
                self.dim
            )));
        }
        if !h.is_multiple_of(self.sr) || !w.is_multiple_of(self.sr) {
            return Err(Error::InvalidShape(format!(
                "reduction ratio {} does not divide the {h}x{w} grid",
                self.sr
            )));
        }
        let n = s[0];
        let kv_src = match &self.reduce {
            Some((conv, norm)) => {
                let map = tokens_to_map(tape, x, h, w)?;
                let reduced = conv.forward(tape, p, map)?;
                let tokens = map_to_tokens(tape, reduced)?;
                norm.forward(tape, p, tokens)?
            }
            None => x,
        };
        let q = split_heads(tape, self.q.forward(tape, p, x)?, self.heads)?;
        let k = split_heads(tape, self.k.forward(tape, p, kv_src)?, self.heads)?;
        let v = split_heads(tape, self.v.forward(tape, p, kv_src)?, self.heads)?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let scores = tape.matmul(q, kt)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let attn = softmax_rows(tape, tape.mul_scalar(scores, scale));
        let mixed = tape.matmul(attn, v)?;
        let merged = merge_heads(tape, mixed, n, self.heads)?;
        Ok((self.proj.forward(tape, p, merged)?, attn))
    }
}

/// Linear expansion, 3×3 depthwise convolution on the grid, GELU, linear
/// projection back.
#[derive(Clone, Debug)]
pub struct MixFfn {
    pub fc1: Linear,
    pub dwconv: Conv2d,
    pub fc2: Linear,
}

impl MixFfn {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Initializer, name: &str, dim: usize, expand: usize) -> Self {
        let hidden = dim * expand;
        Self {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), dim, hidden, Init::XavierNormal),
            dwconv: Conv2d::new(
                store,
                init,
                &format!("{name}.dwconv"),
                hidden,
                hidden,
                3,
                ConvSpec::depthwise(1, 1, hidden),
                Init::XavierNormal,
            ),
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, dim, Init::XavierNormal),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] != h * w {
            return Err(Error::ShapeMismatch(format!("mix-ffn over {s:?} on a {h}x{w} grid")));
        }
        let hidden = self.fc1.forward(tape, p, x)?;
        let map = tokens_to_map(tape, hidden, h, w)?;
        let mixed = gelu(tape, self.dwconv.forward(tape, p, map)?);
        let tokens = map_to_tokens(tape, mixed)?;
        self.fc2.forward(tape, p, tokens)
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: SrAttention,
    pub norm2: LayerNorm,
    pub ffn: MixFfn,
}

impl Block {
    fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var, h: usize, w: usize) -> Result<(Var, Var)> {
        let (a, weights) = self.attn.forward(tape, p, self.norm1.forward(tape, p, x)?, h, w)?;
        let x = tape.add(x, a)?;
        let f = self.ffn.forward(tape, p, self.norm2.forward(tape, p, x)?, h, w)?;
        Ok((tape.add(x, f)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub embed: PatchEmbed,
    pub blocks: Vec<Block>,
}

/// Encoder stage outputs `F_1..F_4`; level `i` (0-based) is
/// `[N, C_i, H/2^(i+2), W/2^(i+2)]`.
#[derive(Clone, Copy, Debug)]
pub struct PyramidFeatures {
    pub maps: [Var; 4],
}

/// Attention weights of the last block of one stage, first batch item.
#[derive(Clone, Debug)]
pub struct AttentionRecord<T> {
    /// `[heads, T, T_kv]`.
    pub weights: Tensor<T>,
    pub grid: (usize, usize),
    pub kv_grid: (usize, usize),
}

pub struct EncoderOutput<T> {
    pub features: PyramidFeatures,
    /// One record per stage when recording was requested.
    pub attention: Option<Vec<AttentionRecord<T>>>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub stages: Vec<Stage>,
}

impl Encoder {
    pub fn new<T: Scalar>(config: &EncoderConfig, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut c_in = config.in_channels;
        for i in 0..4 {
            let dim = config.stage_dims[i];
            let name = format!("encoder.stage{}", i + 1);
            let embed = PatchEmbed::new(store, init, &format!("{name}.embed"), c_in, dim, PATCH_KERNELS[i], PATCH_STRIDES[i]);
            let blocks = (0..config.depths[i])
                .map(|b| {
                    let bn = format!("{name}.block{}", b + 1);
                    Block {
                        norm1: LayerNorm::new(store, &format!("{bn}.norm1"), dim),
                        attn: SrAttention::new(store, init, &format!("{bn}.attn"), dim, config.heads[i], config.sr_ratios[i]),
                        norm2: LayerNorm::new(store, &format!("{bn}.norm2"), dim),
                        ffn: MixFfn::new(store, init, &format!("{bn}.ffn"), dim, config.ffn_expand),
                    }
                })
                .collect();
            stages.push(Stage { embed, blocks });
            c_in = dim;
        }
        Ok(Self {
            config: config.clone(),
            stages,
        })
    }

    /// `x: [N, C_in, H, W]` with `H` and `W` divisible by 32.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var, record: bool) -> Result<EncoderOutput<T>> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects [N,{},H,W], got {s:?}",
                self.config.in_channels
            )));
        }
        if !s[2].is_multiple_of(32) || !s[3].is_multiple_of(32) {
            return Err(Error::InvalidShape(format!("input {}x{} is not divisible by 32", s[2], s[3])));
        }
        let mut maps = Vec::with_capacity(4);
        let mut records = Vec::new();
        let mut current = x;
        for stage in &self.stages {
            let (mut tokens, h, w) = stage.embed.forward(tape, p, current)?;
            let mut last_attn = None;
            for block in &stage.blocks {
                let (t, a) = block.forward(tape, p, tokens, h, w)?;
                tokens = t;
                last_attn = Some(a);
            }
            if record {
                let sr = stage.blocks.first().map_or(1, |b| b.attn.sr);
                let heads = stage.blocks.first().map_or(1, |b| b.attn.heads);
                if let Some(a) = last_attn {
                    let full = tape.value(a);
                    let per = full.numel() / full.shape()[0] * heads;
                    let sh = full.shape();
                    records.push(AttentionRecord {
                        weights: Tensor::from_vec(&[heads, sh[1], sh[2]], full.data()[..per].to_vec())?,
                        grid: (h, w),
                        kv_grid: (h / sr, w / sr),
                    });
                }
            }
            current = tokens_to_map(tape, tokens, h, w)?;
            maps.push(current);
        }
        Ok(EncoderOutput {
            features: PyramidFeatures {
                maps: [maps[0], maps[1], maps[2], maps[3]],
            },
            attention: record.then_some(records),
        })
    }
}

/// Raw head-averaged attention row of query token `query`, shaped to the
/// key grid. Rows sum to one.
pub fn attention_row<T: Scalar>(record: Option<&AttentionRecord<T>>, query: usize) -> Result<Tensor<T>> {
    let record = record.ok_or(Error::NotRecorded)?;
    let s = record.weights.shape();
    let (heads, t, tk) = (s[0], s[1], s[2]);
    if query >= t {
        return Err(Error::InvalidShape(format!("query {query} out of {t} tokens")));
    }
    let inv: T = cast(1.0 / heads as f64);
    let mut row = vec![T::zero(); tk];
    for hd in 0..heads {
        let src = &record.weights.data()[(hd * t + query) * tk..][..tk];
        row.iter_mut().zip(src).for_each(|(r, &v)| *r += v * inv);
    }
    Tensor::from_vec(&[record.kv_grid.0, record.kv_grid.1], row)
}

/// [`attention_row`] min-max normalized to `[0, 1]`; a constant row maps to
/// all zeros.
pub fn attention_heatmap<T: Scalar>(record: Option<&AttentionRecord<T>>, query: usize) -> Result<Tensor<T>> {
    Ok(min_max_normalize(&attention_row(record, query)?))
}

pub(crate) fn min_max_normalize<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let lo = t.data().iter().copied().fold(T::infinity(), T::min);
    let hi = t.data().iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    if !(range > T::zero()) {
        return t.zeros_like();
    }
    t.map(|v| (v - lo) / range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Coords, Fill};

    fn build(cfg: &EncoderConfig, seed: u64) -> (Encoder, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let enc = Encoder::new(cfg, &mut store, &mut Initializer::new(seed)).unwrap();
        (enc, store)
    }

    fn image(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::filled(shape, Fill::Normal { seed, std: 1.0 }).unwrap()
    }

    #[test]
    fn patch_embed_token_counts() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer::new(1);
        let e1 = PatchEmbed::new(&mut store, &mut init, "e1", 3, 8, 7, 4);
        let e2 = PatchEmbed::new(&mut store, &mut init, "e2", 8, 16, 3, 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(image(&[1, 3, 64, 64], 2));
        let (t1, h, w) = e1.forward(&tape, &p, x).unwrap();
        assert_eq!((tape.shape(t1), h, w), (vec![1, 256, 8], 16, 16));
        let m = tokens_to_map(&tape, t1, h, w).unwrap();
        let (t2, h2, w2) = e2.forward(&tape, &p, m).unwrap();
        assert_eq!((tape.shape(t2), h2, w2), (vec![1, 64, 16], 8, 8));
        let odd = tape.constant(image(&[1, 3, 30, 30], 3));
        assert!(matches!(e1.forward(&tape, &p, odd), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn patch_embed_gradcheck() {
        let mut store = ParamStore::<f64>::new();
        let e = PatchEmbed::new(&mut store, &mut Initializer::new(4), "e", 3, 8, 7, 4);
        let proj = image(&[1, 16, 8], 5);
        let mut inputs = vec![image(&[1, 3, 16, 16], 6)];
        inputs.extend(store.tensors().iter().cloned());
        let err = grad_check_many(
            |tape, v| {
                let p = Bound::from_vars(v[1..].to_vec());
                let (t, _, _) = e.forward(tape, &p, v[0])?;
                let pr = tape.constant(proj.clone());
                Ok(tape.sum_all(tape.mul(t, pr)?))
            },
            &inputs,
            1e-6,
            Coords::All,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    /// Per-pair loop attention used as an oracle (single batch item).
    fn naive_attention(x: &Tensor<f64>, store: &ParamStore<f64>, a: &SrAttention, h: usize, w: usize) -> Vec<f64> {
        let c = a.dim;
        let t = h * w;
        let lin = |rows: &[Vec<f64>], l: &Linear| -> Vec<Vec<f64>> {
            let (wt, b) = (store.get(l.weight), store.get(l.bias));
            rows.iter()
                .map(|r| (0..wt.shape()[0]).map(|o| b.data()[o] + (0..r.len()).map(|i| wt.data()[o * r.len() + i] * r[i]).sum::<f64>()).collect())
                .collect()
        };
        let tokens: Vec<Vec<f64>> = (0..t).map(|i| x.data()[i * c..(i + 1) * c].to_vec()).collect();
        let kv_src = match &a.reduce {
            None => tokens.clone(),
            Some((conv, norm)) => {
                let (hk, wk) = (h / a.sr, w / a.sr);
                let wt = store.get(conv.weight);
                let b = store.get(conv.bias);
                let mut out = Vec::new();
                for ky in 0..hk {
                    for kx in 0..wk {
                        let mut v: Vec<f64> = b.data().to_vec();
                        for (co, vo) in v.iter_mut().enumerate() {
                            for ci in 0..c {
                                for dy in 0..a.sr {
                                    for dx in 0..a.sr {
                                        let tok = (ky * a.sr + dy) * w + kx * a.sr + dx;
                                        *vo += wt.data()[((co * c + ci) * a.sr + dy) * a.sr + dx] * tokens[tok][ci];
                                    }
                                }
                            }
                        }
                        let m = v.iter().sum::<f64>() / c as f64;
                        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c as f64;
                        let g = store.get(norm.gamma).data();
                        let be = store.get(norm.beta).data();
                        out.push((0..c).map(|i| (v[i] - m) / (var + 1e-6).sqrt() * g[i] + be[i]).collect());
                    }
                }
                out
            }
        };
        let (q, k, v) = (lin(&tokens, &a.q), lin(&kv_src, &a.k), lin(&kv_src, &a.v));
        let d = c / a.heads;
        let mut merged = vec![vec![0.0; c]; t];
        for hd in 0..a.heads {
            for i in 0..t {
                let logits: Vec<f64> = (0..k.len())
                    .map(|j| (0..d).map(|e| q[i][hd * d + e] * k[j][hd * d + e]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for j in 0..k.len() {
                    let pij = (logits[j] - m).exp() / z;
                    for e in 0..d {
                        merged[i][hd * d + e] += pij * v[j][hd * d + e];
                    }
                }
            }
        }
        lin(&merged, &a.proj).concat()
    }

    fn attention_case(dim: usize, heads: usize, sr: usize, grid: usize, seed: u64) -> f64 {
        let mut store = ParamStore::<f64>::new();
        let a = SrAttention::new(&mut store, &mut Initializer::new(seed), "a", dim, heads, sr);
        let x = image(&[1, grid * grid, dim], seed + 100);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = tape.constant(x.clone());
        let (y, attn) = a.forward(&tape, &p, xv, grid, grid).unwrap();
        assert_eq!(tape.shape(attn), vec![heads, grid * grid, (grid / sr) * (grid / sr)]);
        let want = naive_attention(&x, &store, &a, grid, grid);
        let got = tape.get(y).data().to_vec();
        got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn attention_matches_naive_oracle() {
        assert!(attention_case(8, 1, 1, 4, 1) < 1e-5);
        assert!(attention_case(8, 2, 1, 4, 2) < 1e-5);
        assert!(attention_case(8, 2, 2, 8, 3) < 1e-5);
    }

    #[test]
    fn reduced_attention_has_sixteen_keys() {
        let mut store = ParamStore::<f64>::new();
        let a = SrAttention::new(&mut store, &mut Initializer::new(9), "a", 4, 1, 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(image(&[1, 64, 4], 1));
        let (_, attn) = a.forward(&tape, &p, x, 8, 8).unwrap();
        assert_eq!(tape.shape(attn), vec![1, 64, 16]);
        for row in tape.get(attn).data().chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let odd = tape.constant(image(&[1, 25, 4], 1));
        assert!(matches!(a.forward(&tape, &p, odd, 5, 5), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn uniform_attention_averages_values() {
        let mut store = ParamStore::<f64>::new();
        let a = SrAttention::new(&mut store, &mut Initializer::new(2), "a", 3, 1, 1);
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        *store.get_mut(a.q.weight) = Tensor::zeros(&[3, 3]).unwrap();
        *store.get_mut(a.k.weight) = Tensor::zeros(&[3, 3]).unwrap();
        *store.get_mut(a.v.weight) = eye.clone();
        *store.get_mut(a.proj.weight) = eye;
        let x = image(&[1, 4, 3], 8);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = tape.constant(x.clone());
        let (y, _) = a.forward(&tape, &p, xv, 2, 2).unwrap();
        let mean: Vec<f64> = (0..3).map(|c| (0..4).map(|t| x.data()[t * 3 + c]).sum::<f64>() / 4.0).collect();
        for row in tape.get(y).data().chunks(3) {
            for (v, m) in row.iter().zip(&mean) {
                assert!((v - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mix_ffn_shape_zero_weights_and_gradcheck() {
        let mut store = ParamStore::<f64>::new();
        let f = MixFfn::new(&mut store, &mut Initializer::new(3), "f", 8, 4);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(image(&[2, 16, 8], 4));
        let y = f.forward(&tape, &p, x, 4, 4).unwrap();
        assert_eq!(tape.shape(y), vec![2, 16, 8]);

        let mut zeroed = store.clone();
        for id in zeroed.ids().collect::<Vec<_>>() {
            let z = zeroed.get(id).zeros_like();
            *zeroed.get_mut(id) = z;
        }
        let bias = Tensor::from_vec(&[8], (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        *zeroed.get_mut(f.fc2.bias) = bias.clone();
        let tape = Tape::new();
        let p = zeroed.bind(&tape);
        let x = tape.constant(image(&[1, 16, 8], 5));
        let y = f.forward(&tape, &p, x, 4, 4).unwrap();
        for row in tape.get(y).data().chunks(8) {
            assert_eq!(row, bias.data());
        }

        let proj = image(&[1, 16, 8], 6);
        let mut inputs = vec![image(&[1, 16, 8], 7)];
        inputs.extend(store.tensors().iter().cloned());
        let err = grad_check_many(
            |tape, v| {
                let p = Bound::from_vars(v[1..].to_vec());
                let y = f.forward(tape, &p, v[0], 4, 4)?;
                let pr = tape.constant(proj.clone());
                Ok(tape.sum_all(tape.mul(y, pr)?))
            },
            &inputs,
            1e-6,
            Coords::All,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn pyramid_shapes_for_64() {
        let (enc, store) = build(&EncoderConfig::tiny(), 1);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(image(&[1, 3, 64, 64], 2));
        let out = enc.forward(&tape, &p, x, false).unwrap();
        let shapes: Vec<Vec<usize>> = out.features.maps.iter().map(|&m| tape.shape(m)).collect();
        assert_eq!(
            shapes,
            vec![vec![1, 16, 16, 16], vec![1, 32, 8, 8], vec![1, 64, 4, 4], vec![1, 128, 2, 2]]
        );
        for &m in &out.features.maps {
            assert!(tape.get(m).all_finite());
        }
        assert!(out.attention.is_none());
        let bad = tape.constant(image(&[1, 3, 48, 48], 2));
        assert!(matches!(enc.forward(&tape, &p, bad, false), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn depth_bookkeeping() {
        let base = EncoderConfig::tiny();
        let (_, s1) = build(&base, 1);
        for stage in 0..4 {
            let mut deeper = base.clone();
            deeper.depths[stage] = 2;
            let (_, s2) = build(&deeper, 1);
            for other in 0..4 {
                let prefix = format!("encoder.stage{}.", other + 1);
                let (a, b) = (s1.numel_with_prefix(&prefix), s2.numel_with_prefix(&prefix));
                if other == stage {
                    let block = s1.numel_with_prefix(&format!("encoder.stage{}.block1.", stage + 1));
                    assert_eq!(b - a, block);
                } else {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn attention_records_and_heatmaps() {
        let (enc, store) = build(&EncoderConfig::tiny(), 3);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(image(&[2, 3, 64, 64], 4));
        let out = enc.forward(&tape, &p, x, true).unwrap();
        let recs = out.attention.unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0].kv_grid, (2, 2));
        for r in &recs {
            for row in r.weights.data().chunks(r.weights.shape()[2]) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            let hm = attention_heatmap(Some(r), 0).unwrap();
            let lo = hm.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = hm.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if r.kv_grid.0 * r.kv_grid.1 > 1 {
                assert_eq!((lo, hi), (0.0, 1.0));
            }
        }
        assert!(matches!(attention_heatmap::<f64>(None, 0), Err(Error::NotRecorded)));
    }

    #[test]
    fn uniform_record_gives_constant_raw_map() {
        let rec: AttentionRecord<f64> = AttentionRecord {
            weights: Tensor::filled(&[2, 4, 4], Fill::Value(0.25)).unwrap(),
            grid: (2, 2),
            kv_grid: (2, 2),
        };
        let raw = attention_row(Some(&rec), 1).unwrap();
        assert!(raw.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(attention_heatmap(Some(&rec), 1).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
