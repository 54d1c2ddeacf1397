//! Pointwise nonlinearities.
//!
//! GELU uses the tanh approximation
//! `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.

use crate::scalar::{cast, Scalar};
use crate::tensor::{Tape, Tensor, Var};

fn unary<T: Scalar>(tape: &Tape<T>, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
    let xv = tape.value(x);
    let value = xv.map(f);
    let yv = std::rc::Rc::new(value.clone());
    tape.record(
        &[x],
        value,
        Box::new(move |g| {
            let d = g
                .data()
                .iter()
                .zip(xv.data().iter().zip(yv.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
        }),
    )
}

/// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
pub fn relu<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    unary(tape, x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    unary(tape, x, sigmoid_scalar, |_, y| y * (T::one() - y))
}

pub fn gelu<T: Scalar>(tape: &Tape<T>, x: Var) -> Var {
    unary(tape, x, gelu_scalar, |x, _| gelu_grad_scalar(x))
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_A: f64 = 0.044715;

fn gelu_c<T: Scalar>() -> T {
    cast((2.0 / std::f64::consts::PI).sqrt())
}

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half: T = cast(0.5);
    let u = gelu_c::<T>() * (x + cast::<T>(GELU_A) * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half: T = cast(0.5);
    let a: T = cast(GELU_A);
    let c = gelu_c::<T>();
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + cast::<T>(3.0) * a * x * x)
}
