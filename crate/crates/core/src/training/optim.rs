//! AdamW with bias-corrected moments and decoupled weight decay, plus the
//! step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;

pub const BETAS: (f64, f64) = (0.9, 0.999);
pub const EPS: f64 = 1e-8;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(Tensor::zeros_like).collect();
        Self {
            lr,
            weight_decay,
            betas: BETAS,
            eps: EPS,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)`; `grads` is in store order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {i} {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = self.betas;
        let c1: T = cast(1.0 / (1.0 - b1.powi(t)));
        let c2: T = cast(1.0 / (1.0 - b2.powi(t)));
        let (b1, b2): (T, T) = (cast(b1), cast(b2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr: T = cast(self.lr);
        let decay: T = cast(self.lr * self.weight_decay);
        let eps: T = cast(self.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (theta, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let update = (m[j] * c1) / ((v[j] * c2).sqrt() + eps);
                *theta = *theta - decay * *theta - lr * update;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub total_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            decay_factor: 0.1,
            decay_period: 40,
            total_epochs: 200,
        }
    }
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::InvalidEpoch {
                epoch,
                total: self.total_epochs,
            });
        }
        Ok(self.base_lr * self.decay_factor.powi((epoch / self.decay_period.max(1)) as i32))
    }
}
