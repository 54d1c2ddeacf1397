//! Dense tensors and the reverse-mode tape built over them.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_many, Coords};
pub use ops::{EwiseOp, ReduceOp, Rhs};
pub use tape::{BackwardFn, Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::{cast, Scalar};

/// Initial contents for [`Tensor::filled`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    Value(f64),
    /// Normal deviates with the given seed and standard deviation.
    Normal { seed: u64, std: f64 },
}

/// Contiguous row-major n-dimensional array. Image tensors use N×C×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("rank 0 tensor".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], fill: Fill) -> Result<Self> {
        let n = check_extents(shape)?;
        let data = match fill {
            Fill::Value(v) => vec![cast(v); n],
            Fill::Normal { seed, std } => {
                if !(std > 0.0) {
                    return Err(Error::InvalidShape(format!("normal fill needs std > 0, got {std}")));
                }
                let mut rng = SeededRng::new(seed);
                (0..n).map(|_| cast(rng.normal() * std)).collect()
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, Fill::Value(0.0))
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, Fill::Value(1.0))
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Zeros with the shape of `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != self.numel() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    /// Single item `b` of a batched tensor, keeping a leading extent of 1.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        let n = self.shape[0];
        if b >= n {
            return Err(Error::InvalidShape(format!("batch index {b} out of {n}")));
        }
        let per = self.numel() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self {
            shape,
            data: self.data[b * per..(b + 1) * per].to_vec(),
        })
    }

    /// Concatenates tensors of identical shape along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidShape("stack of nothing".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch(format!(
                    "stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fill() {
        let t = Tensor::<f32>::filled(&[2, 2], Fill::Value(0.0)).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(t.shape(), &[2, 2]);
    }

    #[test]
    fn seeded_normal_is_deterministic() {
        let f = Fill::Normal { seed: 7, std: 1.0 };
        let a = Tensor::<f32>::filled(&[3], f).unwrap();
        let b = Tensor::<f32>::filled(&[3], f).unwrap();
        let bytes = |t: &Tensor<f32>| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn seeded_normal_std_regression() {
        let t = Tensor::<f64>::filled(&[1000], Fill::Normal { seed: 1, std: 0.02 }).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.02).abs() < 0.004, "std {std}");
        // Frozen from the xoshiro256++/Box-Muller stream.
        assert!((std - 0.020_067_820_779_821_44).abs() < 1e-12, "std {std:.17}");
    }

    #[test]
    fn bad_extents_rejected() {
        assert!(matches!(Tensor::<f32>::zeros(&[2, 0]), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::<f32>::zeros(&[]), Err(Error::InvalidShape(_))));
        assert!(matches!(
            Tensor::<f32>::filled(&[2], Fill::Normal { seed: 0, std: 0.0 }),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn stack_and_batch_item() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.batch_item(1).unwrap().data(), &[3.0, 4.0]);
    }
}
