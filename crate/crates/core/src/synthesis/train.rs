//! Mini-batch training with a patch-level train/validation split and early stopping.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, OptimizerConfig, Real};

use super::patches::{make_batch, TrainingSample};
use super::{loss, GeneratorConfig, GeneratorModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub optimizer: OptimizerConfig,
    pub initialization: String,
}

impl TrainingHistory {
    /// `epoch,train_loss,val_loss` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for r in &self.epochs {
            w.write_record([r.epoch.to_string(), format!("{:.9e}", r.train_loss), format!("{:.9e}", r.val_loss)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the validation loss has not improved for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Deterministic 70/30-style split of sample indices.
pub(crate) fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n_train);
    (idx, val)
}

fn evaluate<T: Real>(model: &GeneratorModel<T>, samples: &[TrainingSample], idx: &[usize]) -> Result<f64> {
    let c = model.config();
    let mut total = 0.0;
    for chunk in idx.chunks(c.batch_size) {
        let refs: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let (inputs, targets) = make_batch::<T>(&refs, c.input_channels, c.patch_size);
        let out = model.forward(&inputs[0], &inputs[1])?;
        total += loss(&out, &targets[0], &targets[1])? * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Train from a fresh initialization; see [`train_with`].
pub fn train<T: Real>(samples: &[TrainingSample], config: &GeneratorConfig) -> Result<(GeneratorModel<T>, TrainingHistory)> {
    train_with(samples, config, |_| {})
}

/// Adam over shuffled mini-batches until `max_epochs` or early stopping; returns the
/// parameters with the lowest validation loss. `on_epoch` sees every epoch record.
pub fn train_with<T: Real>(
    samples: &[TrainingSample],
    config: &GeneratorConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(GeneratorModel<T>, TrainingHistory)> {
    config.validate()?;
    if samples.len() < 2 {
        return Err(Error::InsufficientSample { what: "training patches", found: samples.len(), required: 2 });
    }
    let expected = config.input_channels * config.patch_size * config.patch_size;
    if let Some(bad) = samples.iter().find(|s| s.inputs.iter().any(|v| v.len() != expected)) {
        return Err(Error::ShapeMismatch { expected: vec![expected], found: vec![bad.inputs[0].len()] });
    }
    let mut model = GeneratorModel::<T>::new(config.clone())?;
    let (train_idx, val_idx) = split(samples.len(), config.train_fraction, config.rng_seed);
    let mut adam = Adam::new(config.optimizer, model.params().len());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params().to_vec();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    shuffle_rng.set_stream(2);
    let mut order = train_idx.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (inputs, targets) = make_batch::<T>(&refs, config.input_channels, config.patch_size);
            let (l, grads) = model.loss_and_gradient(&inputs[0], &inputs[1], &targets[0], &targets[1])?;
            if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, detail: format!("non-finite loss or gradient (loss {l})") });
            }
            adam.step(model.params_mut(), &grads);
            train_total += l * chunk.len() as f64;
        }
        let train_loss = train_total / order.len() as f64;
        let val_loss = evaluate(&model, samples, &val_idx)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("non-finite validation loss {val_loss}") });
        }
        let record = EpochRecord { epoch, train_loss, val_loss };
        on_epoch(&record);
        records.push(record);
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_params.copy_from_slice(model.params()),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val_loss) = stopper.best();
    model.params_mut().copy_from_slice(&best_params);
    let history = TrainingHistory {
        epochs: records,
        best_epoch,
        best_val_loss,
        stopped_early,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        optimizer: config.optimizer,
        initialization: "he-normal fan-in, zero bias".into(),
    };
    Ok((model, history))
}
