//! Optimizers, the epoch loop, and metrics emission.
//!
//! Datasets come from `orim_core::data`; this module only consumes them.

use crate::model::{argmax, Model};
use crate::{GcnnError, Result};
use orim_core::data::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Shuffle seed; the model seed lives in its own config.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

/// First-moment/second-moment state for Adam, or velocity for momentum.
pub enum Optimizer {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
        lr: f64,
    },
    SgdMomentum {
        velocity: Vec<f64>,
        lr: f64,
        momentum: f64,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
                lr,
            },
            OptimizerKind::SgdMomentum => Optimizer::SgdMomentum {
                velocity: vec![0.0; n],
                lr,
                momentum: 0.9,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Adam { m, v, t, lr } => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let b1t = 1.0 - BETA1.powi(*t as i32);
                let b2t = 1.0 - BETA2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
                    let mhat = m[i] / b1t;
                    let vhat = v[i] / b2t;
                    params[i] -= *lr * mhat / (vhat.sqrt() + EPS);
                }
            }
            Optimizer::SgdMomentum {
                velocity,
                lr,
                momentum,
            } => {
                for i in 0..params.len() {
                    velocity[i] = *momentum * velocity[i] - *lr * grads[i];
                    params[i] += velocity[i];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.epoch, r.split, r.loss, r.accuracy
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(model: &Model, data: &Dataset, classes: usize) -> Result<EvalReport> {
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    for i in 0..data.len() {
        let label = data.labels[i] as usize;
        let (loss, logits) = model.loss_on(data.image(i), label)?;
        loss_sum += loss;
        let pred = argmax(&logits);
        confusion[label][pred] += 1;
        if pred == label {
            hits += 1;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(EvalReport {
        loss: loss_sum / n,
        accuracy: hits as f64 / n,
        confusion,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Train in place; the model ends holding its best-validation parameters.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
) -> Result<TrainOutcome> {
    train_with_progress(model, cfg, train_data, val_data, |_| {})
}

/// Like [`train`], invoking `on_row` as each metrics row is produced.
pub fn train_with_progress(
    model: &mut Model,
    cfg: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    if train_data.is_empty() {
        return Err(GcnnError::ShapeMismatch {
            got: vec![0],
            want: "a nonempty training split".to_string(),
        });
    }
    let classes = model.config.classes;
    let mut params = model.flat_params();
    let mut opt = Optimizer::new(cfg.optimizer, params.len(), cfg.learning_rate);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut best_epoch = 0;
    let mut best_val_accuracy = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let label = train_data.labels[i] as usize;
                let (logits, caches) = model.forward(train_data.image(i))?;
                let (loss, grad_logits) =
                    crate::layers::softmax_cross_entropy(logits.view(), label);
                batch_loss += loss;
                if argmax(&logits) == label {
                    epoch_hits += 1;
                }
                let grads = model.backward(&caches, grad_logits);
                let flat = model.grads_to_flat(&grads);
                for (a, g) in grad_acc.iter_mut().zip(&flat) {
                    *a += g;
                }
            }
            if !batch_loss.is_finite() {
                return Err(GcnnError::Diverged {
                    epoch,
                    reason: "non-finite batch loss".to_string(),
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for g in grad_acc.iter_mut() {
                *g *= scale;
            }
            opt.step(&mut params, &grad_acc);
            model.set_flat_params(&params)?;
        }
        let train_row = MetricsRow {
            epoch,
            split: "train".to_string(),
            loss: epoch_loss / train_data.len() as f64,
            accuracy: epoch_hits as f64 / train_data.len() as f64,
        };
        on_row(&train_row);
        rows.push(train_row);
        let val = evaluate(model, val_data, classes)?;
        let val_row = MetricsRow {
            epoch,
            split: "val".to_string(),
            loss: val.loss,
            accuracy: val.accuracy,
        };
        on_row(&val_row);
        rows.push(val_row);
        if val.accuracy > best_val_accuracy {
            best_val_accuracy = val.accuracy;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
        }
    }
    model.set_flat_params(&best_params)?;
    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_val_accuracy,
    })
}
