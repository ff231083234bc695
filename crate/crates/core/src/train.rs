//! Training loop and evaluation.
//!
//! One epoch: shuffle the training set with a seeded RNG, walk mini-batches
//! through forward/backward/Adam, blend batch-norm batch statistics into the
//! running ones, then score the validation split in inference mode. Loss and
//! accuracy reported for the training set are the running averages over the
//! train-mode batches, matching the usual per-epoch curves.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, cross_entropy, forward_train};
use crate::data::{augment, AugmentSpec, LabeledImages};
use crate::error::{Error, Result};
use crate::graph::{Mode, ModelGraph, BN_MOMENTUM};
use crate::label::NUM_CLASSES;
use crate::optim::{AdamState, DEFAULT_LR};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub augment: Option<AugmentSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 35,
            batch_size: 32,
            lr: DEFAULT_LR,
            augment: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f32,
    pub train_acc: f32,
    pub val_loss: f32,
    pub val_acc: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// CSV with header `epoch,train_loss,train_acc,val_loss,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f32,
    pub mean_loss: f32,
    /// confusion[i][j] counts samples of true class i predicted as j.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// Index of the row maximum; ties break toward the lowest class index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Train in place. Deterministic for a fixed seed: shuffling, augmentation,
/// and dropout all derive from it. The model is left in inference mode with
/// the last epoch's parameters.
pub fn train(
    model: &mut ModelGraph,
    train_split: &LabeledImages,
    val_split: &LabeledImages,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if train_split.is_empty() {
        return Err(Error::EmptySplit { split: "train" });
    }
    if val_split.is_empty() {
        return Err(Error::EmptySplit { split: "val" });
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument {
            op: "train",
            reason: "batch_size must be >= 1".into(),
        });
    }
    let mut report = TrainReport::default();
    let mut adam = AdamState::new(model, config.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    for epoch in 1..=config.epochs {
        model.set_mode(Mode::Train);
        let mut indices: Vec<usize> = (0..train_split.len()).collect();
        indices.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0u64;
        for chunk in indices.chunks(config.batch_size) {
            let batch = match &config.augment {
                None => train_split.batch(chunk)?,
                Some(spec) => {
                    let mut images = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        images.push(augment(&train_split.images[i], spec, &mut augment_rng)?);
                    }
                    stack(&images)?
                }
            };
            let labels: Vec<usize> = chunk.iter().map(|&i| train_split.labels[i]).collect();
            let (probs, cache) = forward_train(model, &batch)?;
            loss_sum += cross_entropy(&probs, &labels)? as f64 * chunk.len() as f64;
            for (row, &label) in probs.as_f32()?.chunks_exact(NUM_CLASSES).zip(&labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }
            model.update_running_stats(&cache.cache, BN_MOMENTUM);
            let grads = backward(model, &batch, &labels, cache)?;
            adam.step(model, &grads)?;
        }

        model.set_mode(Mode::Infer);
        let val = evaluate(model, val_split)?;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: (loss_sum / train_split.len() as f64) as f32,
            train_acc: correct as f32 / train_split.len() as f32,
            val_loss: val.mean_loss,
            val_acc: val.accuracy,
        });
    }
    model.set_mode(Mode::Infer);
    Ok(report)
}

fn stack(images: &[Tensor]) -> Result<Tensor> {
    let shape = images[0].shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * images[0].numel());
    for img in images {
        data.extend_from_slice(img.as_f32()?);
    }
    let mut batch_shape = vec![images.len()];
    batch_shape.extend_from_slice(&shape);
    Tensor::from_vec(&batch_shape, data)
}

/// Accuracy, mean loss, and the 3x3 confusion matrix over a split, in
/// inference mode.
pub fn evaluate(model: &ModelGraph, split: &LabeledImages) -> Result<EvalResult> {
    if split.is_empty() {
        return Err(Error::EmptySplit { split: "evaluate" });
    }
    if model.mode() != Mode::Infer {
        return Err(Error::InferModeRequired { op: "evaluate" });
    }
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut loss_sum = 0.0f64;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(64) {
        let batch = split.batch(chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| split.labels[i]).collect();
        let probs = model.forward_infer(&batch)?;
        loss_sum += cross_entropy(&probs, &labels)? as f64 * chunk.len() as f64;
        for (row, &label) in probs.as_f32()?.chunks_exact(NUM_CLASSES).zip(&labels) {
            if label >= NUM_CLASSES {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: NUM_CLASSES,
                });
            }
            confusion[label][argmax(row)] += 1;
        }
    }
    let trace: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    Ok(EvalResult {
        accuracy: trace as f32 / split.len() as f32,
        mean_loss: (loss_sum / split.len() as f64) as f32,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_custom_convnet;

    fn toy_split(n_per_class: usize, seed: u64) -> LabeledImages {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = LabeledImages::default();
        for class in 0..NUM_CLASSES {
            for _ in 0..n_per_class {
                // Class-dependent mean makes the toy problem learnable.
                let base = 0.2 + 0.3 * class as f32;
                let data: Vec<f32> = (0..8 * 8 * 3)
                    .map(|_| (base + rng.gen_range(-0.1..0.1f32)).clamp(0.0, 1.0))
                    .collect();
                out.push(Tensor::from_vec(&[8, 8, 3], data).unwrap(), class);
            }
        }
        out
    }

    #[test]
    fn lr_zero_leaves_parameters_bit_identical() {
        let mut model = build_custom_convnet(8, &[4], 8, 0.2, 5).unwrap();
        let before = model.named_params();
        let split = toy_split(4, 1);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.0,
            augment: None,
            seed: 3,
        };
        train(&mut model, &split, &split, &config).unwrap();
        // Running BN statistics do move during training; every trainable
        // parameter must stay bit-identical.
        let after = model.named_params();
        for ((name, a), (_, b)) in before.iter().zip(after.iter()) {
            if name.contains("running") {
                continue;
            }
            assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap(), "{name} changed");
        }
    }

    #[test]
    fn empty_split_rejected() {
        let mut model = build_custom_convnet(8, &[4], 8, 0.2, 5).unwrap();
        let empty = LabeledImages::default();
        let full = toy_split(2, 0);
        assert!(matches!(
            train(&mut model, &empty, &full, &TrainConfig::default()),
            Err(Error::EmptySplit { split: "train" })
        ));
        assert!(matches!(
            train(&mut model, &full, &empty, &TrainConfig::default()),
            Err(Error::EmptySplit { split: "val" })
        ));
        model.set_mode(Mode::Infer);
        assert!(matches!(
            evaluate(&model, &empty),
            Err(Error::EmptySplit { .. })
        ));
    }

    #[test]
    fn defaults_match_training_recipe() {
        let config = TrainConfig::default();
        assert_eq!(config.epochs, 35);
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.lr, 1e-4);
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let split = toy_split(4, 2);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            augment: Some(AugmentSpec::default()),
            seed: 9,
        };
        let mut m1 = build_custom_convnet(8, &[4], 8, 0.2, 5).unwrap();
        let r1 = train(&mut m1, &split, &split, &config).unwrap();
        let mut m2 = build_custom_convnet(8, &[4], 8, 0.2, 5).unwrap();
        let r2 = train(&mut m2, &split, &split, &config).unwrap();
        assert_eq!(r1, r2);
        for ((_, a), (_, b)) in m1.named_params().iter().zip(m2.named_params().iter()) {
            assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap());
        }
    }

    #[test]
    fn loss_decreases_on_learnable_toy_problem() {
        let split = toy_split(8, 4);
        let config = TrainConfig {
            epochs: 6,
            batch_size: 8,
            lr: 2e-3,
            augment: None,
            seed: 1,
        };
        let mut model = build_custom_convnet(8, &[4, 8], 16, 0.0, 2).unwrap();
        let report = train(&mut model, &split, &split, &config).unwrap();
        let first = report.epochs.first().unwrap().train_loss;
        let last = report.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn confusion_matrix_definitions() {
        let mut model = build_custom_convnet(8, &[4], 8, 0.0, 7).unwrap();
        model.set_mode(Mode::Infer);
        let split = toy_split(5, 3);
        let result = evaluate(&model, &split).unwrap();
        // Row sums equal per-class sample counts.
        for row in &result.confusion {
            assert_eq!(row.iter().sum::<u64>(), 5);
        }
        let trace: u64 = (0..NUM_CLASSES).map(|i| result.confusion[i][i]).sum();
        assert!((result.accuracy - trace as f32 / 15.0).abs() < 1e-7);
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
        assert_eq!(argmax(&[0.2, 0.3, 0.5]), 2);
    }

    #[test]
    fn report_csv_shape() {
        let report = TrainReport {
            epochs: vec![EpochStats {
                epoch: 1,
                train_loss: 1.0,
                train_acc: 0.5,
                val_loss: 1.1,
                val_acc: 0.4,
            }],
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,train_acc,val_loss,val_acc"));
        assert_eq!(lines.next(), Some("1,1.000000,0.500000,1.100000,0.400000"));
        assert_eq!(lines.next(), None);
    }
}
