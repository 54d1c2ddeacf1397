//! Segmentation losses on logits `[N, 1, H, W]` against binary targets.

use crate::data::morphology::check_binary;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, sigmoid_scalar};
use crate::scalar::{cast, Scalar};
use crate::tensor::{Tape, Tensor, Var};

pub const DICE_SMOOTH: f64 = 1.0;

fn check<T: Scalar>(tape: &Tape<T>, logits: Var, target: &Tensor<T>) -> Result<()> {
    let s = tape.shape(logits);
    if s != target.shape() {
        return Err(Error::ShapeMismatch(format!("logits {s:?} vs target {:?}", target.shape())));
    }
    check_binary(target, "target")
}

/// `1 − (2·Σpg + ε)/(Σp + Σg + ε)` with `p = σ(logits)`, sums over the
/// whole batch.
pub fn dice_loss<T: Scalar>(tape: &Tape<T>, logits: Var, target: &Tensor<T>) -> Result<Var> {
    check(tape, logits, target)?;
    let p = sigmoid(tape, logits);
    let g = tape.constant(target.clone());
    let inter = tape.sum_all(tape.mul(p, g)?);
    let g_sum = target.data().iter().fold(0.0, |a, v| a + v.to_f64_lossy());
    let num = tape.add_scalar(tape.mul_scalar(inter, 2.0), DICE_SMOOTH);
    let den = tape.add_scalar(tape.sum_all(p), g_sum + DICE_SMOOTH);
    Ok(tape.rsub_scalar(1.0, tape.div(num, den)?))
}

/// Mean binary cross-entropy in the form `max(x,0) − x·g + ln(1 + e^{−|x|})`.
pub fn bce_loss<T: Scalar>(tape: &Tape<T>, logits: Var, target: &Tensor<T>) -> Result<Var> {
    check(tape, logits, target)?;
    let x = tape.value(logits);
    let inv_n = 1.0 / x.numel() as f64;
    let total = x.data().iter().zip(target.data()).fold(0.0, |acc, (&xi, &gi)| {
        let (xi, gi) = (xi.to_f64_lossy(), gi.to_f64_lossy());
        acc + xi.max(0.0) - xi * gi + (-xi.abs()).exp().ln_1p()
    });
    let g = target.clone();
    Ok(tape.record(
        &[logits],
        Tensor::scalar(cast(total * inv_n)),
        Box::new(move |up| {
            let scale = up.data()[0] * cast(inv_n);
            let d = x.data().iter().zip(g.data()).map(|(&xi, &gi)| (sigmoid_scalar(xi) - gi) * scale).collect();
            vec![Some(Tensor::from_vec(x.shape(), d).expect("shape of logits"))]
        }),
    ))
}

/// Dice plus BCE with unit weights.
pub fn combined_loss<T: Scalar>(tape: &Tape<T>, logits: Var, target: &Tensor<T>) -> Result<Var> {
    let d = dice_loss(tape, logits, target)?;
    let b = bce_loss(tape, logits, target)?;
    tape.add(d, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Fill};

    fn value(f: impl Fn(&Tape<f64>, Var, &Tensor<f64>) -> Result<Var>, x: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let l = f(&tape, v, g).unwrap();
        let out = tape.get(l).data()[0];
        out
    }

    fn random_target(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = crate::rng::SeededRng::new(seed);
        Tensor::from_vec(&[1, 1, n, n], (0..n * n).map(|_| rng.bernoulli(0.4) as u8 as f64).collect()).unwrap()
    }

    #[test]
    fn dice_limits() {
        let ones = Tensor::<f64>::ones(&[1, 1, 10, 10]).unwrap();
        assert!(value(dice_loss, &ones.map(|_| 1e3), &ones).abs() < 1e-12);
        let n = 100.0;
        let hard_zero = ones.map(|_| -1e3);
        assert!((value(dice_loss, &hard_zero, &ones) - (1.0 - 1.0 / (n + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn dice_matches_scalar_formula() {
        let x = Tensor::<f64>::filled(&[1, 1, 4, 4], Fill::Normal { seed: 3, std: 2.0 }).unwrap();
        let g = random_target(4, 4);
        let (mut pg, mut p, mut gs) = (0.0, 0.0, 0.0);
        for (&xi, &gi) in x.data().iter().zip(g.data()) {
            let s = 1.0 / (1.0 + (-xi).exp());
            pg += s * gi;
            p += s;
            gs += gi;
        }
        let want = 1.0 - (2.0 * pg + 1.0) / (p + gs + 1.0);
        assert!((value(dice_loss, &x, &g) - want).abs() < 1e-6);
        let err = grad_check(|tape, v| dice_loss(tape, v, &g), &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn bce_cases() {
        let g = random_target(4, 5);
        let zeros = Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap();
        assert!((value(bce_loss, &zeros, &g) - std::f64::consts::LN_2).abs() < 1e-12);
        let ones = Tensor::<f64>::ones(&[1, 1, 4, 4]).unwrap();
        let big = value(bce_loss, &ones.map(|_| 50.0), &ones);
        assert!((0.0..1e-20).contains(&big));
        let huge = value(bce_loss, &ones.map(|_| -800.0), &ones);
        assert!((huge - 800.0).abs() < 1e-9);

        let x = Tensor::<f64>::filled(&[1, 1, 4, 4], Fill::Normal { seed: 6, std: 1.5 }).unwrap();
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let l = bce_loss(&tape, v, &g).unwrap();
        let grads = tape.backward(l).unwrap();
        for ((d, &xi), &gi) in grads.wrt(v).data().iter().zip(x.data()).zip(g.data()) {
            let want = (1.0 / (1.0 + (-xi).exp()) - gi) / 16.0;
            assert!((d - want).abs() < 1e-6);
        }
        let err = grad_check(|tape, v| bce_loss(tape, v, &g), &x, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn combined_is_the_sum() {
        let x = Tensor::<f64>::filled(&[2, 1, 4, 4], Fill::Normal { seed: 7, std: 1.0 }).unwrap();
        let g = Tensor::from_vec(&[2, 1, 4, 4], [random_target(4, 8).into_data(), random_target(4, 9).into_data()].concat()).unwrap();
        let c = value(combined_loss, &x, &g);
        assert!((c - value(dice_loss, &x, &g) - value(bce_loss, &x, &g)).abs() < 1e-7);
        assert!(c > 0.0);
    }

    #[test]
    fn rejects_bad_targets() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]).unwrap();
        let soft = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 0.5, 1.0, 1.0]).unwrap();
        let tape = Tape::new();
        let v = tape.constant(x);
        assert!(matches!(dice_loss(&tape, v, &soft), Err(Error::InvalidTarget(_))));
        assert!(matches!(bce_loss(&tape, v, &soft), Err(Error::InvalidTarget(_))));
        let wrong = Tensor::zeros(&[1, 1, 2, 3]).unwrap();
        assert!(matches!(combined_loss(&tape, v, &wrong), Err(Error::ShapeMismatch(_))));
    }
}
