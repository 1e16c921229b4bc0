use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Loss, Model, Optimizer, OptimizerKind, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: Loss,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            loss: Loss::CrossEntropy,
            seed: 0,
            patience: None,
        }
    }
}

/// Source of `(input, target)` samples without the batch axis. `rng` is
/// seeded per epoch so random crops and augmentation are reproducible.
pub trait Dataset {
    fn len(&self) -> usize;
    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed samples held in memory.
pub struct TensorDataset {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl Dataset for TensorDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn sample(&self, index: usize, _rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
        Ok((self.inputs[index].clone(), self.targets[index].clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

fn batch<D: Dataset + ?Sized>(data: &D, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        let (x, y) = data.sample(i, rng)?;
        xs.push(x);
        ys.push(y);
    }
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// Mean loss over a dataset in inference mode.
pub fn evaluate_loss<D: Dataset + ?Sized>(model: &Model, data: &D, cfg: &TrainConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let (x, y) = batch(data, chunk, &mut rng)?;
        let p = model.predict(&x)?;
        total += cfg.loss.value(&p, &y)? * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mini-batch training. Shuffling and per-sample randomness derive from
/// `cfg.seed` and the epoch number only, so runs are bit-reproducible.
/// With a validation set the weights of the best validation epoch are kept.
pub fn train<D: Dataset + ?Sized>(
    model: &mut Model,
    train_set: &D,
    val_set: Option<&D>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, model);
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch(train_set, chunk, &mut rng)?;
            let (loss, grads, tape) = model.loss_and_grad(&x, &y, cfg.loss)?;
            if grads.params.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch}")));
            }
            model.update_running_stats(&tape);
            opt.step(model, &grads.params, cfg.learning_rate);
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate_loss(model, v, cfg)?),
            _ => None,
        };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(vl) = val_loss {
            if best.as_ref().map_or(true, |(b, _)| vl < *b) {
                best = Some((vl, model.clone()));
                report.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience.is_some_and(|p| stale >= p) {
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(report)
}
