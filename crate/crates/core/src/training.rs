//! Minibatch training with validation-F1 early stopping and best-epoch
//! restore.

use std::time::Instant;

use candle::backprop::GradStore;
use candle::Var;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::eval::exact_f1;
use crate::model::{PhraseBreakModel, DEFAULT_THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    /// Global gradient-norm ceiling; off by default.
    pub grad_clip: Option<f64>,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 64,
            max_epochs: 20,
            patience: 10,
            seed: 0,
            decision_threshold: DEFAULT_THRESHOLD,
            grad_clip: None,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch size, epochs and patience must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return bad(format!(
                "decision threshold {} is outside [0, 1]",
                self.decision_threshold
            ));
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) || self.weight_decay < 0.0 {
            return bad("gradient clip must be positive and weight decay non-negative".into());
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n` cut into batches; the order differs per epoch.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to strictly beat the best
/// validation F1. Ties keep the earlier epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, f1: f64) -> Verdict {
        match self.best {
            Some((_, best)) if f1 <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((epoch, f1));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn line(&self) -> String {
        format!(
            "epoch={} loss={:.6} val_f1={:.4} seconds={:.3}",
            self.epoch, self.loss, self.val_f1, self.seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn lines(&self) -> String {
        self.epochs.iter().map(|e| e.line() + "\n").collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The epoch loop without the model: `run_epoch(epoch)` trains one epoch
/// and returns `(training loss, validation F1)`; `on_improved(epoch)` is
/// called whenever a new best is reached.
pub fn run_protocol(
    config: &TrainConfig,
    mut run_epoch: impl FnMut(usize) -> Result<(f64, f64)>,
    mut on_improved: impl FnMut(usize) -> Result<()>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    let mut stopping = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let (loss, val_f1) = run_epoch(epoch)?;
        let verdict = stopping.observe(epoch, val_f1);
        if verdict == Verdict::Improved {
            on_improved(epoch)?;
        }
        let record = EpochRecord {
            epoch,
            loss,
            val_f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        if verdict == Verdict::Stop {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    let (best_epoch, best_f1) = stopping.best().expect("at least one epoch ran");
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_f1,
        stopped_early,
    })
}

fn clip_gradients(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<()> {
    let mut total = 0f64;
    for var in vars {
        if let Some(g) = grads.get(var) {
            total += g.sqr()?.sum_all()?.to_dtype(candle::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for var in vars {
            if let Some(g) = grads.remove(var) {
                grads.insert(var, (g * scale)?);
            }
        }
    }
    Ok(())
}

fn require_labels(utterances: &[Utterance], role: &str) -> Result<()> {
    if let Some(u) = utterances.iter().find(|u| u.labels.is_none() || u.is_empty()) {
        return Err(Error::InvalidUtterance {
            id: u.id.clone(),
            message: format!("{role} utterances must be labeled and non-empty"),
        });
    }
    Ok(())
}

/// Trains `model` in place. On return the model holds the parameters of the
/// best validation epoch.
pub fn train(
    model: &PhraseBreakModel,
    train_set: &[Utterance],
    validation: &[Utterance],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    require_labels(train_set, "training")?;
    require_labels(validation, "validation")?;

    let vars = model.trainable_vars();
    let mut optimizer = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let gold: Vec<&Utterance> = train_set.iter().collect();
    let mut best_snapshot = None;

    let report = run_protocol(
        config,
        |epoch| {
            let mut weighted = 0f64;
            let mut tokens = 0usize;
            for (batch_no, indices) in make_batches(gold.len(), config.batch_size, config.seed, epoch)
                .into_iter()
                .enumerate()
            {
                let utts: Vec<&Utterance> = indices.iter().map(|&i| gold[i]).collect();
                let batch = model.encode_batch(&utts)?;
                let loss = model.loss(&batch)?;
                let value = loss.to_dtype(candle::DType::F64)?.to_scalar::<f64>()?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                        loss: value,
                    });
                }
                let mut grads = loss.backward()?;
                if let Some(max_norm) = config.grad_clip {
                    clip_gradients(&mut grads, &vars, max_norm)?;
                }
                optimizer.step(&grads)?;
                let n: usize = batch.lengths.iter().sum();
                weighted += value * n as f64;
                tokens += n;
            }
            let predictions: Vec<Vec<bool>> = model
                .predict(validation, config.decision_threshold, config.batch_size)?
                .into_iter()
                .map(|p| p.labels)
                .collect();
            Ok((weighted / tokens as f64, exact_f1(validation, &predictions)?))
        },
        |_| {
            best_snapshot = Some(model.snapshot()?);
            Ok(())
        },
        on_epoch,
    )?;
    if let Some(snapshot) = &best_snapshot {
        model.restore(snapshot)?;
    }
    Ok(report)
}
