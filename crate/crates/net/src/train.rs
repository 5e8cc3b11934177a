//! Mini-batch training with early stopping, and evaluation.

use std::fmt::Write as _;

use jmap_core::data::Sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::Metrics;
use crate::model::{Mode, Model, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{cross_entropy, softmax, Tensor};
use crate::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 15,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(NetError::Config("batch_size and patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub fold: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Learning curves as `epoch,fold,train_acc,val_acc,train_loss,val_loss`.
pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,fold,train_acc,val_acc,train_loss,val_loss\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.fold, r.train_acc, r.val_acc, r.train_loss, r.val_loss
        )
        .unwrap();
    }
    s
}

/// Stack samples into an `(N, C, D, H, W)` batch with their class indices.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor, Vec<usize>), NetError> {
    let first = samples.first().ok_or_else(|| NetError::Shape("empty batch".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(samples.len() * first.data.len());
    for s in samples {
        if s.shape() != shape {
            return Err(NetError::Shape(format!(
                "sample {} has shape {:?}, batch has {shape:?}",
                s.subject_id,
                s.shape()
            )));
        }
        data.extend_from_slice(&s.data);
    }
    let t = Tensor::from_vec(&[samples.len(), shape[0], shape[1], shape[2], shape[3]], data)?;
    Ok((t, samples.iter().map(|s| s.label.index()).collect()))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

/// Eval-mode pass over `samples` in chunks of `batch_size`.
pub fn evaluate(model: &mut Model, samples: &[Sample], batch_size: usize) -> Result<Evaluation, NetError> {
    let k = model.config().num_classes;
    let mut loss = 0.0;
    let mut labels = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut probabilities = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch(&refs)?;
        let logits = model.forward(&x, Mode::Eval)?;
        loss += cross_entropy(&logits, &y)?.0 * chunk.len() as f64;
        for p in softmax(&logits) {
            predictions.push(argmax(&p));
            probabilities.push(p);
        }
        labels.extend(y);
    }
    Ok(Evaluation {
        metrics: Metrics::from_predictions(&labels, &predictions, k),
        loss: if samples.is_empty() {
            0.0
        } else {
            loss / samples.len() as f64
        },
        predictions,
        probabilities,
    })
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One shuffled pass; returns mean training loss and accuracy as seen
/// during the pass (train mode).
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Adam,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), NetError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for idx in order.chunks(batch_size) {
        let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let (x, y) = batch(&refs)?;
        model.zero_grad();
        let logits = model.forward(&x, Mode::Train)?;
        let (loss, g) = cross_entropy(&logits, &y)?;
        model.backward_params(&g)?;
        opt.step(model);
        loss_sum += loss * idx.len() as f64;
        let k = logits.shape()[1];
        correct += logits
            .data()
            .chunks(k)
            .zip(&y)
            .filter(|(row, &t)| argmax(row) == t)
            .count();
    }
    let n = samples.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    /// Weights at the epoch with the lowest validation loss (the last epoch
    /// when there is no validation set).
    pub best: Model,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    /// Metrics of `best` on the validation set.
    pub validation: Option<Evaluation>,
}

/// Seed for fold `fold` derived from the run seed.
fn fold_seed(seed: u64, fold: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((fold as u64) << 8)
        .wrapping_add(stream)
}

/// Train one fold from a fresh model.
pub fn train_fold(
    config: &ModelConfig,
    train: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldOutcome, NetError> {
    let model = Model::new(config.clone(), fold_seed(cfg.seed, fold, 1))?;
    train_model(model, train, validation, cfg, fold)
}

/// Train `model` in place of a fresh one; `train_fold` is the usual entry.
pub fn train_model(
    mut model: Model,
    train: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldOutcome, NetError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NetError::EmptyFold(fold));
    }
    let mut opt = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(cfg.seed, fold, 2));
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let (train_loss, train_acc) = train_epoch(&mut model, &mut opt, train, cfg.batch_size, &mut rng)?;
        let (val_loss, val_acc) = if validation.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let e = evaluate(&mut model, validation, cfg.batch_size)?;
            (e.loss, e.metrics.accuracy)
        };
        curve.push(EpochRecord {
            epoch,
            fold,
            train_acc,
            val_acc,
            train_loss,
            val_loss,
        });
        if validation.is_empty() {
            continue;
        }
        match &best {
            Some((b, ..)) if val_loss >= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((val_loss, epoch, model.clone()));
                stale = 0;
            }
        }
    }
    let (best_epoch, mut best) = match best {
        Some((_, e, m)) => (e, m),
        None => (curve.len(), model),
    };
    let validation = if validation.is_empty() {
        None
    } else {
        Some(evaluate(&mut best, validation, cfg.batch_size)?)
    };
    Ok(FoldOutcome {
        fold,
        best,
        best_epoch,
        curve,
        validation,
    })
}

/// Train every `(train, validation)` fold in order.
pub fn train(
    config: &ModelConfig,
    folds: &[(Vec<Sample>, Vec<Sample>)],
    cfg: &TrainConfig,
) -> Result<Vec<FoldOutcome>, NetError> {
    folds
        .iter()
        .enumerate()
        .map(|(i, (tr, va))| train_fold(config, tr, va, cfg, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_rows() {
        let r = EpochRecord {
            epoch: 1,
            fold: 0,
            train_acc: 0.5,
            val_acc: 0.25,
            train_loss: 1.0,
            val_loss: 2.0,
        };
        let s = curves_csv(&[r]);
        assert_eq!(
            s,
            "epoch,fold,train_acc,val_acc,train_loss,val_loss\n1,0,0.5,0.25,1,2\n"
        );
    }

    #[test]
    fn argmax_prefers_the_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
