use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Which coordinates of each input [`grad_check_many`] perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `per_tensor` coordinates per input, drawn from `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences with step `eps`.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, Coords::All)
}

/// [`grad_check`] over several inputs at once; returns the max error over
/// all checked coordinates.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64, coords: Coords) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::NumericalFailure(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.get(out).data()[0];
        if !v.is_finite() {
            return Err(Error::NumericalFailure(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v0 = tape.get(out).data()[0];
    if !v0.is_finite() {
        return Err(Error::NumericalFailure(format!("objective evaluated to {v0}")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let picks: Vec<usize> = match coords {
            Coords::All => (0..input.numel()).collect(),
            Coords::Sample { per_tensor, seed } => {
                let mut rng = SeededRng::substream(seed, ti as u64);
                if per_tensor >= input.numel() {
                    (0..input.numel()).collect()
                } else {
                    (0..per_tensor).map(|_| rng.below(input.numel())).collect()
                }
            }
        };
        for i in picks {
            let orig = input.data()[i];
            work[ti].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[ti].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti].data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    #[test]
    fn sum_has_zero_error() {
        let x = Tensor::filled(&[4, 3], Fill::Normal { seed: 1, std: 1.0 }).unwrap();
        let err = grad_check(|tape, v| Ok(tape.sum_all(v)), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite_objective() {
        let x = Tensor::<f64>::ones(&[2]).unwrap();
        assert!(matches!(
            grad_check(|tape, v| Ok(tape.sum_all(v)), &x, 1e-2),
            Err(Error::NumericalFailure(_))
        ));
        assert!(matches!(
            grad_check(|tape, v| Ok(tape.mul_scalar(tape.sum_all(v), f64::INFINITY)), &x, 1e-5),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::filled(&[3], Fill::Normal { seed: 2, std: 1.0 }).unwrap();
        let err = grad_check(
            |tape, v| {
                let value = tape.get(v).map(|t| t * t);
                // Deliberately wrong VJP: claims d(x^2)/dx = x.
                let xv = tape.value(v);
                let y = tape.record(
                    &[v],
                    value,
                    Box::new(move |g| vec![Some(Tensor::from_parts(g.shape().to_vec(), g.data().iter().zip(xv.data()).map(|(a, b)| a * b).collect()))]),
                );
                Ok(tape.sum_all(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.1, "{err}");
    }
}
