use std::io::Write;

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::model::Model;
use super::schedule::lr_at_step;
use crate::data::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, ParamSet, Tape};

/// One row of the per-step loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn write_loss_log<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Step and loss of the kept parameters when selecting on validation.
    pub best_validation: Option<(usize, f64)>,
}

/// Step-by-step optimizer loop; any step count can be reached from a
/// checkpoint with the same result as an uninterrupted run.
pub struct Trainer<'a> {
    checkpoint: Checkpoint,
    data: &'a Dataset,
    log: Vec<LogRow>,
    validation: Option<&'a Dataset>,
    best: Option<(usize, f64, ParamSet)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset) -> Result<Self> {
        let model = Model::new(config)?;
        let adam = AdamState::new(
            AdamConfig {
                lr: model.config.lr,
                ..AdamConfig::default()
            },
            &model.params.tensors(),
        );
        Self::resume(Checkpoint { model, adam, step: 0 }, data)
    }

    pub fn resume(checkpoint: Checkpoint, data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        Ok(Self {
            checkpoint,
            data,
            log: Vec::new(),
            validation: None,
            best: None,
        })
    }

    /// Tracks validation loss and keeps the best parameters when the config
    /// asks for it.
    pub fn with_validation(mut self, data: &'a Dataset) -> Self {
        self.validation = Some(data);
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.checkpoint.model.config
    }

    pub fn step_count(&self) -> usize {
        self.checkpoint.step
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    /// One optimizer update.
    pub fn step(&mut self) -> Result<LogRow> {
        let config = self.checkpoint.model.config.clone();
        let t = self.checkpoint.step;
        if t >= config.total_steps {
            return Err(Error::invalid(format!("already at total_steps {}", config.total_steps)));
        }
        let per_epoch = self.data.len().div_ceil(config.batch_size);
        let epoch = (t / per_epoch) as u64;
        let batch = make_batches(
            self.data,
            config.batch_size,
            config.max_video_len,
            config.max_text_len,
            Some(epoch_seed(config.seed, epoch)),
        )
        .nth(t % per_epoch)
        .expect("index below batches per epoch");

        let model = &self.checkpoint.model;
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true);
        let obj = model
            .objective(&mut tape, &bound, &batch.items, (t as u64) << 32)
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { step: t + 1 },
                other => other,
            })?;
        let l1 = tape.value(obj.l1).item()?;
        let l2 = tape.value(obj.l2).item()?;
        let total = tape.value(obj.total).item()?;
        if !(l1.is_finite() && l2.is_finite() && total.is_finite()) {
            return Err(Error::NonFiniteLoss { step: t + 1 });
        }
        let vars = bound.vars();
        let mut grads = tape.backward(obj.total)?;
        let grads: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: t + 1 });
        }
        let lr = lr_at_step(t + 1, config.lr, config.warmup_steps, config.total_steps)?;
        let mut params = self.checkpoint.model.params.tensors();
        self.checkpoint.adam.step_with_lr(&mut params, &grads, lr)?;
        self.checkpoint.model.params.set_tensors(params)?;
        self.checkpoint.step = t + 1;

        let row = LogRow {
            step: t + 1,
            l1,
            l2,
            total,
            lr,
        };
        self.log.push(row);
        if config.select_on_validation && (t + 1).is_multiple_of(config.validation_every) {
            self.track_validation()?;
        }
        Ok(row)
    }

    pub fn run_until(&mut self, step: usize) -> Result<()> {
        let target = step.min(self.config().total_steps);
        while self.checkpoint.step < target {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let total = self.config().total_steps;
        self.run_until(total)?;
        let mut best_validation = None;
        if let Some((step, loss, params)) = self.best.take() {
            if self.config().select_on_validation {
                self.checkpoint.model.params = params;
                best_validation = Some((step, loss));
            }
        }
        Ok(TrainOutcome {
            checkpoint: self.checkpoint,
            log: self.log,
            best_validation,
        })
    }

    fn track_validation(&mut self) -> Result<()> {
        let Some(val) = self.validation else {
            return Ok(());
        };
        let loss = validation_loss(&self.checkpoint.model, val)?;
        if self.best.as_ref().is_none_or(|(_, best, _)| loss < *best) {
            self.best = Some((self.checkpoint.step, loss, self.checkpoint.model.params.clone()));
        }
        Ok(())
    }
}

/// Mean total loss over the batches of `data` in stored order.
pub fn validation_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let c = &model.config;
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in make_batches(data, c.batch_size, c.max_video_len, c.max_text_len, None) {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let obj = model.objective(&mut tape, &bound, &batch.items, 0)?;
        sum += tape.value(obj.total).item()? * batch.len() as f64;
        count += batch.len();
    }
    if count == 0 {
        return Err(Error::invalid("validation set is empty"));
    }
    Ok(sum / count as f64)
}

/// Trains `config` on `data` from scratch.
pub fn train(config: TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    Trainer::new(config, data)?.run()
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
