//! Mini-batch training and evaluation loops.

use std::fmt::Write as _;

use crate::data::{AugmentPlan, Sample};
use crate::error::{Error, Result};
use crate::model::SsFormer;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::training::loss::combined_loss;
use crate::training::metrics::{dice_iou, threshold_logits};
use crate::training::optim::AdamW;

pub const DEFAULT_BATCH: usize = 4;

/// Stacks samples into `images: [N,3,H,W]` and `masks: [N,1,H,W]`.
pub fn make_batch<T: Scalar>(samples: &[Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<Tensor<T>> = samples.iter().map(|s| s.image.cast()).collect();
    let masks: Vec<Tensor<T>> = samples.iter().map(|s| s.mask.cast()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// One forward/backward/update on a batch. Returns the loss and the logits.
pub fn train_step<T: Scalar>(
    model: &mut SsFormer<T>,
    opt: &mut AdamW<T>,
    images: &Tensor<T>,
    masks: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let x = tape.constant(images.clone());
    let out = model.forward(&tape, &p, x, false)?;
    let loss = combined_loss(&tape, out.logits(), masks)?;
    let value = tape.get(loss).data()[0].to_f64_lossy();
    let logits = (*tape.value(out.logits())).clone();
    if !value.is_finite() {
        return Ok((value, logits));
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Tensor<T>> = p.vars().iter().map(|&v| grads.take(v)).collect();
    opt.step(&mut model.params, &g)?;
    Ok((value, logits))
}

fn per_image<T: Scalar>(logits: &Tensor<T>, masks: &Tensor<T>) -> Result<Vec<(f64, f64)>> {
    let pred = threshold_logits(logits);
    (0..masks.shape()[0])
        .map(|b| dice_iou(&pred.batch_item(b)?, &masks.batch_item(b)?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub mdice: f64,
}

/// Shuffles with `rng`, then per batch: augment, forward, combined loss,
/// backward, AdamW. `opt.lr` is used as is. Train mDice is measured on the
/// augmented batches as they were seen.
pub fn train_epoch<T: Scalar>(
    model: &mut SsFormer<T>,
    data: &[Sample],
    opt: &mut AdamW<T>,
    rng: &mut SeededRng,
    batch_size: usize,
    augment: bool,
) -> Result<EpochStats> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::InvalidShape("training needs samples and a positive batch size".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
    let mut batches = 0;
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let samples = chunk
            .iter()
            .map(|&i| {
                if augment {
                    AugmentPlan::draw(rng).apply(&data[i])
                } else {
                    Ok(data[i].clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (images, masks) = make_batch::<T>(&samples)?;
        let (loss, logits) = train_step(model, opt, &images, &masks)?;
        if !loss.is_finite() {
            log::warn!("non-finite loss {loss} in batch {b}");
            return Err(Error::DivergenceDetected { batch: b });
        }
        log::debug!("batch {b}: loss {loss:.6}");
        loss_sum += loss;
        dice_sum += per_image(&logits, &masks)?.iter().map(|m| m.0).sum::<f64>();
        batches += 1;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / batches as f64,
        mdice: dice_sum / data.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub mdice: f64,
    pub miou: f64,
    /// `(dice, iou)` per sample in dataset order.
    pub per_image: Vec<(f64, f64)>,
}

/// Metrics at threshold 0.5 without augmentation; parameters are untouched.
pub fn evaluate<T: Scalar>(model: &SsFormer<T>, data: &[Sample], batch_size: usize) -> Result<EvalStats> {
    if data.is_empty() {
        return Err(Error::InvalidShape("no samples to evaluate".into()));
    }
    let mut per = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let (images, masks) = make_batch::<T>(chunk)?;
        per.extend(per_image(&model.predict_logits(&images)?, &masks)?);
    }
    let n = per.len() as f64;
    Ok(EvalStats {
        mdice: per.iter().map(|m| m.0).sum::<f64>() / n,
        miou: per.iter().map(|m| m.1).sum::<f64>() / n,
        per_image: per,
    })
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,train_mdice,val_mdice,val_miou";

/// One CSV row under [`LOG_HEADER`].
pub fn log_row(epoch: usize, lr: f64, train: &EpochStats, val: &EvalStats) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{epoch},{lr:e},{:.6},{:.6},{:.6},{:.6}",
        train.mean_loss, train.mdice, val.mdice, val.miou
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::model::ModelConfig;
    use crate::pld::PldConfig;

    fn small_model(seed: u64) -> SsFormer<f32> {
        let cfg = ModelConfig {
            pld: PldConfig {
                unified_dim: 16,
                ..Default::default()
            },
            ..Default::default()
        };
        SsFormer::new(&cfg, seed).unwrap()
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let data = synth_dataset(6, 32, 1).unwrap();
        let mut model = small_model(1);
        let before = model.params.clone();
        let mut opt = AdamW::new(&model.params, 0.0, 0.0);
        let stats = train_epoch(&mut model, &data, &mut opt, &mut SeededRng::new(2), 4, true).unwrap();
        assert!(stats.mean_loss.is_finite());
        for (a, b) in before.tensors().iter().zip(model.params.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = synth_dataset(5, 32, 3).unwrap();
        let run = || {
            let mut model = small_model(4);
            let mut opt = AdamW::new(&model.params, 1e-3, 0.01);
            let mut rng = SeededRng::new(5);
            (0..2)
                .map(|_| train_epoch(&mut model, &data, &mut opt, &mut rng, 2, true).unwrap().mean_loss.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluate_is_pure_and_consistent() {
        let data = synth_dataset(5, 32, 6).unwrap();
        let model = small_model(7);
        let before = model.params.clone();
        let a = evaluate(&model, &data, 4).unwrap();
        let b = evaluate(&model, &data, 2).unwrap();
        assert_eq!(a, b);
        for (x, y) in before.tensors().iter().zip(model.params.tensors()) {
            assert_eq!(x.data(), y.data());
        }
        assert!(a.per_image.iter().all(|(d, i)| d >= i));
        assert!(a.mdice >= a.miou);
        assert!(matches!(evaluate(&model, &[], 4), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn ground_truth_predictions_score_one() {
        let data = synth_dataset(4, 32, 8).unwrap();
        let (_, masks) = make_batch::<f64>(&data).unwrap();
        let logits = masks.map(|v| if v > 0.5 { 5.0 } else { -5.0 });
        assert!(per_image(&logits, &masks).unwrap().iter().all(|&m| m == (1.0, 1.0)));
    }

    #[test]
    fn divergence_is_reported_with_batch() {
        let data = synth_dataset(8, 32, 9).unwrap();
        let mut model = small_model(10);
        let pred = model.decoder.predict.bias;
        model.params.get_mut(pred).data_mut()[0] = f32::NAN;
        let mut opt = AdamW::new(&model.params, 1e-4, 0.01);
        let err = train_epoch(&mut model, &data, &mut opt, &mut SeededRng::new(1), 4, false).unwrap_err();
        assert!(matches!(err, Error::DivergenceDetected { batch: 0 }));
    }

    #[test]
    fn csv_row_format() {
        let row = log_row(
            3,
            1e-5,
            &EpochStats { mean_loss: 0.5, mdice: 0.25 },
            &EvalStats { mdice: 0.75, miou: 0.6, per_image: vec![] },
        );
        assert_eq!(row, "3,1e-5,0.500000,0.250000,0.750000,0.600000");
        assert_eq!(LOG_HEADER.split(',').count(), row.split(',').count());
    }
}
