//! Mini-batch training with Adam, plateau decay, early stopping and
//! best-checkpoint tracking.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layers::Mode;
use crate::loss::LossKind;
use crate::nets::SegmentationNet;
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::schedule::{EarlyStopping, PlateauScheduler, StopDecision};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// One single-channel image with its per-pixel target.
///
/// For multiclass training `target` holds class indices; for binary training
/// it holds 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub image: Vec<f32>,
    pub target: Vec<u8>,
}

/// Per-sample transform applied on the fly to training batches.
pub type Augment<'a> = dyn Fn(&Sample, &mut ChaCha8Rng) -> Sample + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Multiclass stage settings.
    pub fn coarse() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            max_epochs: 100,
            early_stop_patience: 20,
            scheduler_factor: 0.5,
            scheduler_patience: 5,
            seed: 0,
        }
    }

    /// Organ-wise binary stage settings.
    pub fn organ() -> Self {
        Self { scheduler_patience: 15, ..Self::coarse() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(invalid("train config", "lr must be positive"));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(invalid("train config", "scheduler factor must be in (0, 1)"));
        }
        if self.scheduler_patience == 0 || self.early_stop_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(invalid("train config", "patiences, batch size and epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub wall_ms: u64,
    pub best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainLog {
    /// Equality ignoring wall-clock times.
    pub fn same_run(&self, other: &TrainLog) -> bool {
        let strip = |l: &TrainLog| {
            let mut l = l.clone();
            l.epochs.iter_mut().for_each(|e| e.wall_ms = 0);
            l
        };
        strip(self) == strip(other)
    }
}

pub struct TrainOutcome<T: Scalar> {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: ParamStore<T>,
    pub log: TrainLog,
}

/// Stack samples into `[N, 1, H, W]` and the concatenated targets.
pub fn batch_tensor<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Vec<u8>)> {
    let first = samples.first().ok_or_else(|| invalid("batch", "empty batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(samples.len() * w * h);
    let mut target = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if (s.width, s.height) != (w, h) || s.image.len() != w * h || s.target.len() != w * h {
            return Err(invalid("batch", format!("sample `{}` does not match {w}x{h}", s.id)));
        }
        data.extend(s.image.iter().map(|&v| T::from_f32(v).unwrap()));
        target.extend_from_slice(&s.target);
    }
    Ok((Tensor::new(&[samples.len(), 1, h, w], data)?, target))
}

/// Sample-weighted mean loss over `samples` in eval mode.
pub fn evaluate_loss<T: Scalar, N: SegmentationNet<T>>(net: &mut N, samples: &[Sample], loss: &LossKind, batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("evaluate", "no samples"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, target) = batch_tensor::<T>(&refs)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = net.forward(&mut tape, xv, Mode::Eval)?;
        let l = loss.apply(&mut tape, out, &target)?;
        total += tape.value(l).data()[0].to_f64().unwrap() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Eval-mode probabilities for each sample, `[C, H, W]` flattened per sample.
pub fn predict<T: Scalar, N: SegmentationNet<T>>(net: &mut N, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch_tensor::<T>(&refs)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = net.forward(&mut tape, xv, Mode::Eval)?;
        let t = tape.value(y);
        let per = t.numel() / chunk.len();
        for b in 0..chunk.len() {
            out.push(t.data()[b * per..(b + 1) * per].iter().map(|v| v.to_f32().unwrap()).collect());
        }
    }
    Ok(out)
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub loss: LossKind,
    pub augment: Option<&'a Augment<'a>>,
    /// Receives one JSON line per epoch.
    pub log_sink: Option<&'a mut dyn Write>,
    /// Optional early exit once the training loss falls below this value.
    pub target_train_loss: Option<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, loss: LossKind) -> Self {
        Self { config, loss, augment: None, log_sink: None, target_train_loss: None }
    }

    pub fn run<T: Scalar, N: SegmentationNet<T>>(&mut self, net: &mut N, train: &[Sample], val: &[Sample]) -> Result<TrainOutcome<T>> {
        let cfg = self.config.clone();
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(invalid("train", "train and validation sets must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(net.params());
        let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience);
        let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
        let mut lr = cfg.lr;
        let mut best = net.params().clone();
        let mut best_val = f64::INFINITY;
        let mut best_epoch = 0;
        let mut epochs = Vec::new();
        let mut stop_reason = StopReason::MaxEpochs;
        let mut order: Vec<usize> = (0..train.len()).collect();

        for epoch in 1..=cfg.max_epochs {
            let started = Instant::now();
            order.shuffle(&mut rng);
            let mut train_total = 0.0;
            for idx in order.chunks(cfg.batch_size) {
                let owned: Vec<Sample> = match self.augment {
                    Some(f) => idx.iter().map(|&i| f(&train[i], &mut rng)).collect(),
                    None => idx.iter().map(|&i| train[i].clone()).collect(),
                };
                let refs: Vec<&Sample> = owned.iter().collect();
                let (x, target) = batch_tensor::<T>(&refs)?;
                let mut tape = Tape::new();
                let xv = tape.constant(x);
                let out = net.forward(&mut tape, xv, Mode::Train)?;
                let l = self.loss.apply(&mut tape, out, &target)?;
                let value = tape.value(l).data()[0].to_f64().unwrap();
                if !value.is_finite() {
                    let ids: Vec<&str> = owned.iter().map(|s| s.id.as_str()).collect();
                    return Err(Error::NonFinite {
                        what: "training loss".into(),
                        provenance: Some(format!("epoch {epoch}, batch [{}]", ids.join(", "))),
                    });
                }
                net.params_mut().zero_grad();
                tape.backward(l, net.params_mut())?;
                adam.step(net.params_mut(), lr)?;
                train_total += value * idx.len() as f64;
            }
            let train_loss = train_total / train.len() as f64;
            let val_loss = evaluate_loss(net, val, &self.loss, cfg.batch_size)?;
            if !val_loss.is_finite() {
                return Err(Error::NonFinite { what: "validation loss".into(), provenance: Some(format!("epoch {epoch}")) });
            }
            let is_best = val_loss < best_val;
            if is_best {
                best_val = val_loss;
                best_epoch = epoch;
                best = net.params().clone();
            }
            let record = EpochRecord {
                epoch,
                train_loss,
                val_loss,
                lr,
                wall_ms: started.elapsed().as_millis() as u64,
                best: is_best,
            };
            if let Some(sink) = self.log_sink.as_mut() {
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(sink, "{line}")?;
            }
            epochs.push(record);

            lr = scheduler.step(val_loss);
            if stopper.step(val_loss) == StopDecision::Stop {
                stop_reason = StopReason::EarlyStop;
                break;
            }
            if self.target_train_loss.is_some_and(|t| train_loss < t) {
                stop_reason = StopReason::TargetReached;
                break;
            }
        }
        Ok(TrainOutcome { best, log: TrainLog { epochs, best_epoch, best_val_loss: best_val, stop_reason } })
    }
}
