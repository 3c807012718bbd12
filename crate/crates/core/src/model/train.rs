use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::metrics::{plcc, srocc};
use crate::numerics::{adam_step, AdamConfig, AdamState};

use super::{ClipSample, Model, ModelConfig};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainHyper {
    /// Settings reported for full-size pretrained backbones.
    pub fn paper() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 6,
            weight_decay: 5e-3,
            patience: 20,
            max_epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Same protocol with a learning rate suited to the small synthetic model.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::paper()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when undefined (constant predictions).
    pub val_plcc: f64,
    /// NaN when undefined (all predictions tied).
    pub val_srocc: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_srocc: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Seed stream for minibatch shuffling, distinct from the init stream.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn validation_record(model: &Model, val: &[ClipSample], epoch: usize, train_loss: f64) -> Result<EpochRecord> {
    let scores = model.scores(val)?;
    let mos: Vec<f64> = val.iter().map(|s| s.mos).collect();
    let val_mse = scores
        .iter()
        .zip(&mos)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / mos.len() as f64;
    Ok(EpochRecord {
        epoch,
        train_loss,
        val_plcc: plcc(&scores, &mos).unwrap_or(f64::NAN),
        val_srocc: srocc(&scores, &mos).unwrap_or(f64::NAN),
        val_mse,
    })
}

/// `a` beats `b`: higher SROCC, ties broken by lower MSE. NaN never wins.
fn improves(a: &EpochRecord, b: Option<&EpochRecord>) -> bool {
    match b {
        _ if a.val_srocc.is_nan() => false,
        None => true,
        Some(b) if b.val_srocc.is_nan() => true,
        Some(b) => a.val_srocc > b.val_srocc || (a.val_srocc == b.val_srocc && a.val_mse < b.val_mse),
    }
}

/// Minibatch Adam with early stopping on validation SROCC.
///
/// Deterministic in `(train, val, cfg, hyper)`.
pub fn train(train_set: &[ClipSample], val_set: &[ClipSample], cfg: &ModelConfig, hyper: &TrainHyper) -> Result<TrainOutcome> {
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(Error::Degenerate("empty training split".into()));
    }
    if val_set.len() < 3 {
        return Err(Error::Degenerate(format!(
            "validation split needs at least 3 clips, got {}",
            val_set.len()
        )));
    }

    let mut model = Model::new(*cfg)?;
    let names: Vec<String> = model
        .params()
        .named_params()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut states: Vec<AdamState> = model
        .params()
        .named_params()
        .iter()
        .map(|(_, t)| AdamState::new(t.len(), hyper.adam()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(EpochRecord, Model)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&ClipSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = model.loss_and_grad(&batch)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: loss.total,
                });
            }
            adam_step(&mut model.params_mut().params_mut(), &mut states, &name_refs)?;
            loss_sum += loss.total;
            batches += 1;
        }

        let record = validation_record(&model, val_set, epoch, loss_sum / batches as f64)?;
        history.push(record);
        if improves(&record, best.as_ref().map(|(r, _)| r)) {
            best = Some((record, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_record, best_model) = match best {
        Some(b) => b,
        None => {
            // every epoch had an undefined SROCC; keep the last state
            let last = *history.last().expect("at least one epoch");
            (last, model)
        }
    };
    Ok(TrainOutcome {
        model: best_model,
        best_epoch: best_record.epoch,
        best_val_srocc: best_record.val_srocc,
        history,
        stopped_early,
    })
}
