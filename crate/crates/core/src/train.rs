//! Mini-batch Adam training with early stopping on validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HybridModel, Inputs, LossParts};
use crate::nn::{adam_step, AdamConfig, AdamState, Module, Parameter};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lambda_ae: f64,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: 64,
            lambda_ae: 0.1,
            patience: 10,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("train.batch_size and train.patience must be ≥ 1".into()));
        }
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "train.patience {} must be below train.max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lambda_ae >= 0.0 && self.lambda_ae.is_finite()) {
            return Err(Error::Config(format!("train.lambda_ae {} must be ≥ 0", self.lambda_ae)));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config("train.adam settings out of range".into()));
        }
        Ok(())
    }
}

/// Inputs with class-index labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInputs {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
}

impl LabeledInputs {
    pub fn new(inputs: Inputs, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::dim("labels", inputs.len(), labels.len()));
        }
        Ok(LabeledInputs { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(LabeledInputs {
            inputs: self.inputs.select(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// What the training loop needs from a model.
pub trait Trainable: Module {
    fn loss_and_backward(&mut self, data: &LabeledInputs, lambda_ae: f64) -> Result<LossParts>;
    fn evaluate_loss(&self, data: &LabeledInputs, lambda_ae: f64) -> Result<LossParts>;

    fn snapshot(&self) -> Vec<Tensor> {
        self.parameters().iter().map(|p| p.value.clone()).collect()
    }

    fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let mut params: Vec<&mut Parameter> = self.parameters_mut();
        if params.len() != snapshot.len() {
            return Err(Error::State("snapshot does not match model".into()));
        }
        for (p, v) in params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
        Ok(())
    }
}

impl Trainable for HybridModel {
    fn loss_and_backward(&mut self, data: &LabeledInputs, lambda_ae: f64) -> Result<LossParts> {
        Ok(HybridModel::loss_and_backward(self, &data.inputs, &data.labels, lambda_ae)?.0)
    }

    fn evaluate_loss(&self, data: &LabeledInputs, lambda_ae: f64) -> Result<LossParts> {
        HybridModel::evaluate_loss(self, &data.inputs, &data.labels, lambda_ae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_ce: f64,
    pub val_ce: f64,
    pub train_ae: f64,
    pub val_ae: f64,
}

pub type LossCurve = Vec<EpochRecord>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: LossCurve,
    /// Epoch whose parameters were restored; 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

/// Trains in place. Each epoch visits the training set in a fresh seeded
/// order; `train_*` entries of the curve are sample-weighted means over the
/// epoch's batches, `val_*` entries are computed on the full validation set
/// after the epoch. The parameters with the lowest validation total loss are
/// restored at the end.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &LabeledInputs,
    val_set: &LabeledInputs,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut outcome = TrainOutcome {
        curve: Vec::new(),
        best_epoch: 0,
        best_val_loss: None,
        stopped_early: false,
    };
    if cfg.max_epochs == 0 {
        return Ok(outcome);
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be nonempty".into()));
    }
    let mut adam = AdamState::new(cfg.adam);
    let mut rng = stream(seed, Purpose::Batches, 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.select(chunk)?;
            let diverged = |detail: String| Error::Divergence(format!("epoch {epoch}, batch {}: {detail}", b + 1));
            let parts = match model.loss_and_backward(&batch, cfg.lambda_ae) {
                Err(Error::NonFinite(detail)) => return Err(diverged(detail)),
                other => other?,
            };
            if !parts.total.is_finite() {
                return Err(diverged("non-finite loss".into()));
            }
            adam_step(model.parameters_mut(), &mut adam).map_err(|e| match e {
                Error::Divergence(detail) => diverged(detail),
                other => other,
            })?;
            let w = chunk.len() as f64;
            sums[0] += parts.total * w;
            sums[1] += parts.ce * w;
            sums[2] += parts.ae * w;
        }
        let n = train_set.len() as f64;
        let val = match model.evaluate_loss(val_set, cfg.lambda_ae) {
            Err(Error::NonFinite(detail)) => {
                return Err(Error::Divergence(format!("epoch {epoch}, validation: {detail}")))
            }
            other => other?,
        };
        if !val.total.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: sums[0] / n,
            val_loss: val.total,
            train_ce: sums[1] / n,
            val_ce: val.ce,
            train_ae: sums[2] / n,
            val_ae: val.ae,
        };
        log::debug!("epoch {epoch}: train {:.5} val {:.5}", record.train_loss, record.val_loss);
        outcome.curve.push(record);

        if best.as_ref().is_none_or(|(loss, _)| val.total < *loss) {
            best = Some((val.total, model.snapshot()));
            outcome.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    if let Some((loss, snapshot)) = best {
        model.restore(&snapshot)?;
        outcome.best_val_loss = Some(loss);
    }
    Ok(outcome)
}
