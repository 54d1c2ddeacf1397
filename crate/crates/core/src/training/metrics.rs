//! Per-image Dice and IoU on binary masks, averaged over images.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Foreground where the logit is positive, i.e. where `σ(logit) > 0.5`.
pub fn threshold_logits<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(|v| if v > T::zero() { T::one() } else { T::zero() })
}

/// Dice and IoU of one prediction/target pair; both are 1 when the two
/// masks are empty.
pub fn dice_iou<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, f64)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let half: T = crate::scalar::cast(0.5);
    let (mut inter, mut p, mut g) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.data().iter().zip(target.data()) {
        let (a, b) = (a > half, b > half);
        inter += (a && b) as u64;
        p += a as u64;
        g += b as u64;
    }
    if p + g == 0 {
        return Ok((1.0, 1.0));
    }
    let union = p + g - inter;
    Ok((2.0 * inter as f64 / (p + g) as f64, inter as f64 / union as f64))
}

fn mean_of<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>], pick: fn((f64, f64)) -> f64) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        sum += pick(dice_iou(p, t)?);
    }
    Ok(sum / preds.len() as f64)
}

pub fn mdice<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<f64> {
    mean_of(preds, targets, |(d, _)| d)
}

pub fn miou<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<f64> {
    mean_of(preds, targets, |(_, i)| i)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, bits.len()], bits.iter().map(|&b| b as f64).collect()).unwrap()
    }

    /// Counts pixels with explicit set membership.
    pub(crate) fn brute_force(p: &[bool], g: &[bool]) -> (f64, f64) {
        let pi: Vec<usize> = (0..p.len()).filter(|&i| p[i]).collect();
        let gi: Vec<usize> = (0..g.len()).filter(|&i| g[i]).collect();
        let inter = pi.iter().filter(|i| gi.contains(i)).count();
        let union = (0..p.len()).filter(|&i| p[i] || g[i]).count();
        if pi.is_empty() && gi.is_empty() {
            (1.0, 1.0)
        } else {
            (2.0 * inter as f64 / (pi.len() + gi.len()) as f64, inter as f64 / union as f64)
        }
    }

    #[test]
    fn worked_cases() {
        let g = mask(&[1, 1, 1, 1, 0, 0]);
        assert_eq!(dice_iou(&g, &g).unwrap(), (1.0, 1.0));
        assert_eq!(dice_iou(&mask(&[0, 0, 0, 0, 1, 1]), &g).unwrap(), (0.0, 0.0));
        let (d, i) = dice_iou(&mask(&[1, 1, 0, 0, 0, 0]), &g).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15 && i == 0.5);
        assert_eq!(dice_iou(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), (1.0, 1.0));
        assert!(matches!(dice_iou(&mask(&[0]), &g), Err(Error::ShapeMismatch(_))));
        assert_eq!(threshold_logits(&mask(&[0, 1]).map(|v| v - 0.5)).data(), &[0.0, 1.0]);
        assert_eq!(threshold_logits(&mask(&[0])).data(), &[0.0]);
    }

    #[test]
    fn means_match_brute_force() {
        let mut rng = SeededRng::new(11);
        for _ in 0..100 {
            let n = 1 + rng.below(5);
            let mut preds = Vec::new();
            let mut targets = Vec::new();
            let (mut d, mut io) = (0.0, 0.0);
            for _ in 0..n {
                let p: Vec<bool> = (0..25).map(|_| rng.bernoulli(0.3)).collect();
                let g: Vec<bool> = (0..25).map(|_| rng.bernoulli(0.3)).collect();
                let (bd, bi) = brute_force(&p, &g);
                d += bd;
                io += bi;
                preds.push(mask(&p.iter().map(|&b| b as u8).collect::<Vec<_>>()));
                targets.push(mask(&g.iter().map(|&b| b as u8).collect::<Vec<_>>()));
            }
            assert_eq!(mdice(&preds, &targets).unwrap(), d / n as f64);
            assert_eq!(miou(&preds, &targets).unwrap(), io / n as f64);
        }
    }

    proptest! {
        #[test]
        fn dice_iou_identity(p in proptest::collection::vec(any::<bool>(), 30), g in proptest::collection::vec(any::<bool>(), 30)) {
            let (d, i) = dice_iou(&mask(&p.iter().map(|&b| b as u8).collect::<Vec<_>>()), &mask(&g.iter().map(|&b| b as u8).collect::<Vec<_>>())).unwrap();
            prop_assert!(d >= i);
            prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-10);
        }
    }
}
