//! Finite-difference verification suite over every differentiable layer
//! and the full model with its loss.
//!
//! Each check builds fixed-seed f64 inputs, contracts the op output with a
//! fixed random tensor to get a scalar, and reports the max relative error
//! of the tape gradient against central differences.

use crate::encoder::{EncoderConfig, MixFfn, PatchEmbed, SrAttention};
use crate::error::Result;
use crate::model::{ModelConfig, SsFormer};
use crate::nn::{
    bilinear_upsample, conv2d, gelu, layer_norm, linear, relu, sigmoid, softmax_rows, ConvSpec, Initializer,
    LAYER_NORM_EPS,
};
use crate::params::{Bound, ParamStore};
use crate::pld::{FusionMode, LocalEmphasis, Pld, PldConfig};
use crate::tensor::{grad_check_many, Coords, Fill, Tape, Tensor, Var};
use crate::training::{bce_loss, combined_loss, dice_loss};

pub const EPS: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: Box<dyn Fn() -> Result<f64>>,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    /// Max relative error, or the failure message.
    pub outcome: std::result::Result<f64, String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        matches!(self.outcome, Ok(e) if e < self.tolerance)
    }
}

pub fn run_suite(checks: &[Check]) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| CheckResult {
            name: c.name,
            tolerance: c.tolerance,
            outcome: (c.run)().map_err(|e| e.to_string()),
        })
        .collect()
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::filled(shape, Fill::Normal { seed, std: 1.0 }).expect("valid shape")
}

/// Moves values away from zero so kinked ops are checked off their kink.
fn off_kink(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

fn project(tape: &Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(randn(&tape.shape(y), seed));
    Ok(tape.sum_all(tape.mul(y, r)?))
}

fn layer<F>(name: &'static str, inputs: Vec<Tensor<f64>>, f: F) -> Check
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var> + 'static,
{
    Check {
        name,
        tolerance: LAYER_TOLERANCE,
        run: Box::new(move || {
            grad_check_many(
                |tape, v| {
                    let y = f(tape, v)?;
                    project(tape, y, 7919)
                },
                &inputs,
                EPS,
                Coords::All,
            )
        }),
    }
}

/// Checks a parameterized module: inputs first, then every parameter.
fn module<F>(name: &'static str, inputs: Vec<Tensor<f64>>, store: ParamStore<f64>, f: F) -> Check
where
    F: Fn(&Tape<f64>, &Bound, &[Var]) -> Result<Var> + 'static,
{
    let n = inputs.len();
    let mut all = inputs;
    all.extend(store.tensors().iter().cloned());
    layer(name, all, move |tape, v| f(tape, &Bound::from_vars(v[n..].to_vec()), &v[..n]))
}

pub fn conv2d_check() -> Check {
    layer(
        "conv2d",
        vec![randn(&[2, 3, 6, 5], 1), randn(&[4, 3, 3, 3], 2), randn(&[4], 3)],
        |tape, v| conv2d(tape, v[0], v[1], Some(v[2]), ConvSpec::new(2, 1)),
    )
}

/// Identity whose backward shifts the gradient by one pixel, the effect of
/// an off-by-one padding offset in the input-gradient scatter.
fn misaligned_pad<T: crate::Scalar>(tape: &Tape<T>, x: Var) -> Var {
    let value = (*tape.value(x)).clone();
    let shape = value.shape().to_vec();
    tape.record(
        &[x],
        value,
        Box::new(move |g| {
            let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
            let mut out = vec![T::zero(); g.numel()];
            for p in 0..planes {
                for y in 1..h {
                    for xx in 1..w {
                        out[(p * h + y) * w + xx] = g.data()[(p * h + y - 1) * w + xx - 1];
                    }
                }
            }
            vec![Some(Tensor::from_vec(&shape, out).expect("same shape"))]
        }),
    )
}

/// [`conv2d_check`] against a convolution whose input gradient is
/// misaligned by one pixel. Used to show the suite catches it.
pub fn conv2d_mutant_check() -> Check {
    layer(
        "conv2d",
        vec![randn(&[2, 3, 6, 5], 1), randn(&[4, 3, 3, 3], 2), randn(&[4], 3)],
        |tape, v| {
            let x = misaligned_pad(tape, v[0]);
            conv2d(tape, x, v[1], Some(v[2]), ConvSpec::new(2, 1))
        },
    )
}

fn end_to_end() -> Check {
    Check {
        name: "end_to_end",
        tolerance: END_TO_END_TOLERANCE,
        run: Box::new(|| {
            let cfg = ModelConfig {
                encoder: EncoderConfig::tiny(),
                pld: PldConfig::default(),
            };
            let model = SsFormer::<f64>::new(&cfg, 17)?;
            let image = randn(&[1, 3, 32, 32], 18).map(|v| 0.5 + 0.25 * v);
            let mut rng = crate::rng::SeededRng::new(19);
            let target = Tensor::from_vec(&[1, 1, 32, 32], (0..1024).map(|_| rng.bernoulli(0.3) as u8 as f64).collect())?;
            let mut inputs = vec![image];
            inputs.extend(model.params.tensors().iter().cloned());
            grad_check_many(
                |tape, v| {
                    let p = Bound::from_vars(v[1..].to_vec());
                    let out = model.forward(tape, &p, v[0], false)?;
                    combined_loss(tape, out.logits(), &target)
                },
                &inputs,
                EPS,
                Coords::Sample { per_tensor: 12, seed: 23 },
            )
        }),
    }
}

/// Every layer plus the end-to-end model, in a fixed order.
pub fn standard_suite() -> Vec<Check> {
    let mut init = Initializer::new(5);
    let mut checks = vec![
        layer("matmul", vec![randn(&[2, 3, 4], 1), randn(&[2, 4, 5], 2)], |t, v| t.matmul(v[0], v[1])),
        layer("elementwise", vec![randn(&[3, 4], 1), randn(&[3, 4], 2).map(|v| v.abs() + 0.5)], |t, v| {
            let a = t.mul(v[0], v[1])?;
            let b = t.div(v[0], v[1])?;
            t.sub(a, b)
        }),
        layer("reduce_permute", vec![randn(&[2, 3, 4], 3)], |t, v| {
            let p = t.permute(v[0], &[2, 0, 1])?;
            t.reduce(crate::tensor::ReduceOp::Mean, p, &[1])
        }),
        layer("concat_slice", vec![randn(&[1, 2, 3, 3], 4), randn(&[1, 3, 3, 3], 5)], |t, v| {
            let c = t.concat_channels(v[0], v[1])?;
            t.slice_channels(c, 1, 4)
        }),
        conv2d_check(),
        layer(
            "conv2d_depthwise",
            vec![randn(&[1, 4, 5, 5], 6), randn(&[4, 1, 3, 3], 7), randn(&[4], 8)],
            |t, v| conv2d(t, v[0], v[1], Some(v[2]), ConvSpec::depthwise(1, 1, 4)),
        ),
        layer("linear", vec![randn(&[2, 5, 6], 9), randn(&[4, 6], 10), randn(&[4], 11)], |t, v| {
            linear(t, v[0], v[1], Some(v[2]))
        }),
        layer("relu", vec![off_kink(randn(&[3, 7], 12))], |t, v| Ok(relu(t, v[0]))),
        layer("gelu", vec![randn(&[3, 7], 13)], |t, v| Ok(gelu(t, v[0]))),
        layer("sigmoid", vec![randn(&[3, 7], 14)], |t, v| Ok(sigmoid(t, v[0]))),
        layer("layer_norm", vec![randn(&[3, 6], 15), randn(&[6], 16), randn(&[6], 17)], |t, v| {
            layer_norm(t, v[0], v[1], v[2], LAYER_NORM_EPS)
        }),
        layer("softmax", vec![randn(&[4, 5], 18)], |t, v| Ok(softmax_rows(t, v[0]))),
        layer("bilinear_upsample", vec![randn(&[1, 2, 3, 4], 19)], |t, v| bilinear_upsample(t, v[0], 7, 9)),
    ];

    let mut store = ParamStore::new();
    let embed = PatchEmbed::new(&mut store, &mut init, "e", 3, 8, 7, 4);
    checks.push(module("patch_embed", vec![randn(&[1, 3, 16, 16], 20)], store, move |t, p, v| {
        Ok(embed.forward(t, p, v[0])?.0)
    }));

    for (name, sr) in [("sr_attention", 1), ("sr_attention_reduced", 2)] {
        let mut store = ParamStore::new();
        let attn = SrAttention::new(&mut store, &mut init, "a", 8, 2, sr);
        checks.push(module(name, vec![randn(&[1, 16, 8], 21)], store, move |t, p, v| {
            Ok(attn.forward(t, p, v[0], 4, 4)?.0)
        }));
    }

    let mut store = ParamStore::new();
    let ffn = MixFfn::new(&mut store, &mut init, "f", 8, 4);
    checks.push(module("mix_ffn", vec![randn(&[1, 16, 8], 22)], store, move |t, p, v| {
        ffn.forward(t, p, v[0], 4, 4)
    }));

    let mut store = ParamStore::new();
    let le = LocalEmphasis::new(&mut store, &mut init, "le", 8, 8, true);
    checks.push(module("local_emphasis", vec![randn(&[1, 8, 4, 4], 24)], store, move |t, p, v| {
        le.forward(t, p, v[0], (8, 8))
    }));

    let dims = [4, 6, 8, 10];
    for (name, fusion) in [("fuse_cat", FusionMode::Cat), ("fuse_add", FusionMode::Add)] {
        let mut store = ParamStore::new();
        let pld = Pld::new(
            &PldConfig {
                unified_dim: 6,
                fusion,
                ..Default::default()
            },
            dims,
            &mut store,
            &mut init,
        )
        .expect("valid decoder config");
        let crate::pld::Aggregation::Stepwise { steps } = pld.aggregation else {
            unreachable!("stepwise aggregation is enabled")
        };
        let step = steps.into_iter().next().expect("three steps");
        checks.push(module(
            name,
            vec![randn(&[1, 6, 3, 3], 25), randn(&[1, 6, 3, 3], 26)],
            store,
            move |t, p, v| step.forward(t, p, v[0], v[1]),
        ));
    }

    let mut rng = crate::rng::SeededRng::new(27);
    let target = Tensor::from_vec(&[2, 1, 3, 3], (0..18).map(|_| rng.bernoulli(0.5) as u8 as f64).collect())
        .expect("valid shape");
    let (t1, t2) = (target.clone(), target);
    checks.push(layer("dice_loss", vec![randn(&[2, 1, 3, 3], 28)], move |t, v| dice_loss(t, v[0], &t1)));
    checks.push(layer("bce_loss", vec![randn(&[2, 1, 3, 3], 29)], move |t, v| bce_loss(t, v[0], &t2)));
    checks.push(end_to_end());
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutant_conv_is_flagged() {
        let good = run_suite(&[conv2d_check()]);
        let bad = run_suite(&[conv2d_mutant_check()]);
        assert!(good[0].passed(), "{:?}", good[0].outcome);
        assert!(!bad[0].passed());
        assert_eq!(bad[0].name, "conv2d");
    }
}
