//! Parameterized layers: weights live in a [`ParamStore`], the layer keeps
//! only ids and hyperparameters.

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::{cast, Scalar};
use crate::tensor::{Tape, Tensor, Var};

use super::{conv2d, layer_norm, linear, ConvSpec, LAYER_NORM_EPS};

/// Weight initialization scheme. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `std = sqrt(2 / fan_in)`, for layers feeding a ReLU.
    HeNormal,
    /// `std = sqrt(2 / (fan_in + fan_out))`.
    XavierNormal,
}

impl Init {
    fn std(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::HeNormal => (2.0 / fan_in as f64).sqrt(),
            Init::XavierNormal => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

/// Draws initial weights from one seeded stream, in registration order.
pub struct Initializer {
    rng: SeededRng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SeededRng::new(seed),
        }
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| cast(self.rng.normal() * std)).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: ConvSpec,
        scheme: Init,
    ) -> Self {
        let cig = c_in / spec.groups;
        let fan_in = cig * kernel * kernel;
        let fan_out = c_out / spec.groups * kernel * kernel;
        let w = init.normal(&[c_out, cig, kernel, kernel], scheme.std(fan_in, fan_out));
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::from_parts(vec![c_out], vec![T::zero(); c_out])),
            spec,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        conv2d(tape, x, p[self.weight], Some(p[self.bias]), self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        c_in: usize,
        c_out: usize,
        scheme: Init,
    ) -> Self {
        let w = init.normal(&[c_out, c_in], scheme.std(c_in, c_out));
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::from_parts(vec![c_out], vec![T::zero(); c_out])),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        linear(tape, x, p[self.weight], Some(p[self.bias]))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::from_parts(vec![c], vec![T::one(); c])),
            beta: store.add(format!("{name}.beta"), Tensor::from_parts(vec![c], vec![T::zero(); c])),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        layer_norm(tape, x, p[self.gamma], p[self.beta], LAYER_NORM_EPS)
    }
}
