//! Shared mini-batch training machinery.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, Gradients};
use crate::scalar::Scalar;

/// Optimization and stopping hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Decision threshold on sigmoid outputs, `≥` semantics.
    pub threshold: f64,
    /// Optional weight on positive targets of the binary cross-entropy.
    pub pos_weight: Option<f64>,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            max_epochs: 30,
            patience: 5,
            threshold: 0.5,
            pos_weight: None,
            clip_norm: Some(1.0),
            seed: 29,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning a pretrained encoder.
    pub fn pretrained() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            ..TrainConfig::default()
        }
    }

    /// Defaults for the extractors, whose tags need several epochs to cross
    /// the decision threshold.
    pub fn extractor() -> Self {
        TrainConfig {
            max_epochs: 60,
            patience: 10,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning_rate must be positive and weight_decay nonnegative".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if matches!(self.pos_weight, Some(w) if !(w > 0.0)) {
            return Err(Error::Config("pos_weight must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_f1: f64,
}

/// Shuffled mini-batches of `0..n`.
pub(crate) fn batches(n: usize, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Sums per-example `(loss, gradients)` in a fixed order, so parallel
/// evaluation stays bit-for-bit reproducible.
pub(crate) fn batch_gradients<T, F>(batch: &[usize], f: F) -> (T, Gradients<T>)
where
    T: Scalar,
    F: Fn(usize) -> (T, Gradients<T>) + Sync + Send,
{
    let parts: Vec<(T, Gradients<T>)> = batch.par_iter().map(|&i| f(i)).collect();
    let mut total = T::zero();
    let mut grads = Gradients::default();
    for (loss, g) in parts {
        total += loss;
        grads.merge(g);
    }
    (total, grads)
}

/// Patience-based early stopping on a metric to maximize.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            waited: 0,
        }
    }

    /// Returns true when `metric` is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric > self.best {
            self.best = metric;
            self.waited = 0;
            true
        } else {
            self.waited += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.waited >= self.patience
    }
}

/// Generic epoch loop: shuffled mini-batches, AdamW over the stores returned
/// by `stores`, validation after every epoch, and restoration of the best
/// snapshot. `loss` receives the per-example scale `1 / batch_len`.
pub(crate) fn fit<M, T, L, S, V>(
    model: &mut M,
    train: &[crate::corpus::AnnotatedSentence],
    config: &TrainConfig,
    stream: &str,
    loss: L,
    mut stores: S,
    validate: V,
) -> TrainingLog
where
    M: Clone + Sync,
    T: Scalar,
    L: Fn(&M, &crate::corpus::AnnotatedSentence, T) -> (T, Gradients<T>) + Sync,
    S: FnMut(&mut M) -> Vec<&mut crate::nn::ParamStore<T>>,
    V: Fn(&M) -> f64,
{
    let mut optimizer = crate::nn::AdamW::new(config.optimizer());
    let mut shuffle = crate::seed::stream_rng(config.seed, stream);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut log = TrainingLog::default();
    let mut best: Option<M> = None;
    for epoch in 1..=config.max_epochs {
        let mut epoch_loss = 0.0;
        for batch in batches(train.len(), config.batch_size, &mut shuffle) {
            let scale = T::one() / T::of(batch.len() as f64);
            let (l, mut grads) = {
                let m = &*model;
                batch_gradients(&batch, |i| loss(m, &train[i], scale))
            };
            epoch_loss += l.as_f64() * batch.len() as f64;
            optimizer.step(&mut stores(model), &mut grads);
        }
        let f1 = validate(model);
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / train.len() as f64,
            validation_f1: f1,
        });
        if stopper.observe(f1) {
            log.best_epoch = epoch;
            log.best_validation_f1 = f1;
            best = Some(model.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }
    if let Some(b) = best {
        *model = b;
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_counts_patience() {
        let mut es = EarlyStopping::new(2);
        assert!(es.observe(0.5));
        assert!(!es.observe(0.5));
        assert!(!es.should_stop());
        assert!(!es.observe(0.4));
        assert!(es.should_stop());
        assert!(es.observe(0.6));
        assert!(!es.should_stop());
    }

    #[test]
    fn batches_cover_everything_once() {
        let mut rng = crate::seed::stream_rng(1, "t");
        let b = batches(70, 32, &mut rng);
        assert_eq!(b.len(), 3);
        let mut all: Vec<_> = b.concat();
        all.sort();
        assert_eq!(all, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { threshold: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(TrainConfig::pretrained().learning_rate, 2e-5);
    }
}
