//! End-to-end steps shared by the command-line tool and the tests:
//! split → preprocess → train → calibrate → evaluate, and the baseline
//! comparison on the identical split.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{calibrate_threshold, AnomalyThreshold};
use crate::baseline::LogisticRegression;
use crate::config::RunConfig;
use crate::curve::{detect_plateau, Plateau};
use crate::data::preprocess::{apply_preprocessor, fit_preprocessor, PreprocessStats, Prepared};
use crate::data::record::EnterpriseRecord;
use crate::data::split::{split_dataset, DatasetSplit, SplitManifest, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::fusion::{LevelPolicy, RiskLevel};
use crate::metrics::MetricsReport;
use crate::model::HybridModel;
use crate::train::{train, LabeledInputs, TrainOutcome};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub stats: PreprocessStats,
    pub train: Prepared,
    pub validation: Prepared,
    pub test: Prepared,
}

fn encode(stats: &PreprocessStats, records: &[EnterpriseRecord], part: &str) -> Result<Prepared> {
    let prepared = apply_preprocessor(stats, records)?;
    if let Some(r) = prepared.rejects.first() {
        return Err(Error::Validation(format!(
            "{} {part} record(s) rejected; first: {} ({})",
            prepared.rejects.len(),
            records[r.line - 1].id,
            r.reason
        )));
    }
    Ok(prepared)
}

/// Fits preprocessing on the training part only and encodes all three parts.
pub fn prepare_split(split: &DatasetSplit, seq_len: usize) -> Result<PreparedSplit> {
    let stats = fit_preprocessor(&split.train, seq_len)?;
    Ok(PreparedSplit {
        train: encode(&stats, &split.train, "training")?,
        validation: encode(&stats, &split.validation, "validation")?,
        test: encode(&stats, &split.test, "test")?,
        stats,
    })
}

pub fn labeled(prepared: &Prepared) -> Result<LabeledInputs> {
    LabeledInputs::new(prepared.inputs()?.clone(), prepared.label_indices()?)
}

/// Which records of a dataset to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

/// Recomputes the seeded split and returns the requested part.
pub fn select_split(records: &[EnterpriseRecord], seed: u64, choice: SplitChoice) -> Result<Vec<EnterpriseRecord>> {
    if choice == SplitChoice::All {
        return Ok(records.to_vec());
    }
    let split = split_dataset(records, DEFAULT_RATIOS, seed)?;
    Ok(match choice {
        SplitChoice::Train => split.train,
        SplitChoice::Val => split.validation,
        _ => split.test,
    })
}

/// Threshold from the reconstruction errors of low-risk validation records,
/// or `None` (with a warning) when there are too few of them.
pub fn calibrate_on(model: &HybridModel, data: &Prepared, quantile: f64, warnings: &mut Vec<String>) -> Result<Option<AnomalyThreshold>> {
    let errors = model.apply(data.inputs()?)?.ae_errors;
    let normal: Vec<f64> = errors
        .iter()
        .zip(&data.labels)
        .filter(|(_, l)| **l == Some(RiskLevel::Low))
        .map(|(e, _)| *e)
        .collect();
    match calibrate_threshold(&normal, quantile) {
        Ok(t) => Ok(Some(t)),
        Err(Error::Calibration(reason)) => {
            let msg = format!("anomaly threshold not calibrated: {reason}");
            log::warn!("{msg}");
            warnings.push(msg);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub fn evaluate(model: &HybridModel, data: &Prepared, policy: &LevelPolicy) -> Result<MetricsReport> {
    let truth: Vec<RiskLevel> = data
        .labels
        .iter()
        .zip(&data.ids)
        .map(|(l, id)| l.ok_or_else(|| Error::Evaluation(format!("record {id} has no label"))))
        .collect::<Result<_>>()?;
    let inputs = data.inputs().map_err(|_| Error::Evaluation("no records to evaluate".into()))?;
    let predictions = model.predict(inputs, policy)?;
    let levels: Vec<RiskLevel> = predictions.iter().map(|p| p.level).collect();
    let flags: Vec<Option<bool>> = predictions.iter().map(|p| p.anomaly_flag).collect();
    MetricsReport::new(&truth, &levels, &flags)
}

pub fn evaluate_baseline(model: &LogisticRegression, data: &Prepared, policy: &LevelPolicy) -> Result<MetricsReport> {
    let truth: Vec<RiskLevel> = data.label_indices()?.into_iter().map(RiskLevel::from_index).collect::<Result<_>>()?;
    let levels = model.predict(data.inputs()?, policy)?;
    MetricsReport::new(&truth, &levels, &vec![None; truth.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub split: SplitManifest,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub plateau: Option<Plateau>,
    pub anomaly_threshold: Option<AnomalyThreshold>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: HybridModel,
    /// The input configuration with data-dependent widths resolved.
    pub config: RunConfig,
    pub data: PreparedSplit,
    pub outcome: TrainOutcome,
    pub summary: RunSummary,
}

pub fn train_hybrid(records: &[EnterpriseRecord], config: &RunConfig) -> Result<TrainingRun> {
    config.validate()?;
    let split = split_dataset(records, DEFAULT_RATIOS, config.seed)?;
    let mut warnings = split.warnings.clone();
    let data = prepare_split(&split, config.transformer.seq_len)?;
    warnings.extend(data.stats.constant_features.iter().map(|f| format!("feature `{f}` is constant; std set to 1")));

    let mut config = config.clone();
    config.resolve(data.stats.static_dim(), data.stats.series_dim());
    let model_config = config.model_config(data.stats.static_dim(), data.stats.series_dim());
    let mut model = HybridModel::new(model_config, config.seed)?;
    let outcome = train(&mut model, &labeled(&data.train)?, &labeled(&data.validation)?, &config.train, config.seed)?;
    model.threshold = calibrate_on(&model, &data.validation, config.ae.threshold_quantile, &mut warnings)?;

    let summary = RunSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        seed: config.seed,
        config_sha256: config.hash()?,
        split: split.manifest(),
        epochs_run: outcome.curve.len(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stopped_early: outcome.stopped_early,
        plateau: detect_plateau(&outcome.curve),
        anomaly_threshold: model.threshold,
        warnings,
    };
    Ok(TrainingRun {
        model,
        config,
        data,
        outcome,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub split_sha256: String,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub format_version: u32,
    pub seed: u64,
    pub rows: Vec<ModelRow>,
}

/// Trains the logistic-regression baseline on the run's own split.
pub fn train_baseline(run: &TrainingRun) -> Result<(LogisticRegression, TrainOutcome)> {
    let train_set = labeled(&run.data.train)?;
    let mut lr = LogisticRegression::for_inputs(&train_set.inputs)?;
    let outcome = train(&mut lr, &train_set, &labeled(&run.data.validation)?, &run.config.train, run.config.seed)?;
    Ok((lr, outcome))
}

pub fn compare(run: &TrainingRun) -> Result<Comparison> {
    let policy = run.config.policy;
    let hybrid = evaluate(&run.model, &run.data.test, &policy)?;
    let (lr, _) = train_baseline(run)?;
    let baseline = evaluate_baseline(&lr, &run.data.test, &policy)?;
    let hash = run.summary.split.sha256.clone();
    Ok(Comparison {
        format_version: SUMMARY_FORMAT_VERSION,
        seed: run.config.seed,
        rows: vec![
            ModelRow { model: "Hybrid (DNN+Transformer+AE)".into(), split_sha256: hash.clone(), test: hybrid },
            ModelRow { model: "Logistic Regression".into(), split_sha256: hash, test: baseline },
        ],
    })
}
