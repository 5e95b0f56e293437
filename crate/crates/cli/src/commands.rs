use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use taxrisk_core::config::RunConfig;
use taxrisk_core::curve::{write_csv, write_svg};
use taxrisk_core::data::checkpoint::{load_checkpoint, save_checkpoint};
use taxrisk_core::data::json;
use taxrisk_core::data::preprocess::apply_preprocessor;
use taxrisk_core::data::record::{load_dataset, save_dataset, EnterpriseRecord};
use taxrisk_core::data::synthetic::generate_synthetic;
use taxrisk_core::fusion::{LevelPolicy, RiskLevel};
use taxrisk_core::metrics::{format_table, MetricsReport};
use taxrisk_core::workflow::{self, select_split, SplitChoice, TrainingRun};
use taxrisk_core::{Error, Result};

const ARTIFACT_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = json::to_string(value, true)?;
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn load_records(path: &Path) -> Result<Vec<EnterpriseRecord>> {
    load_dataset(path)?.into_strict()
}

/// `d.jsonl` → `d.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

#[derive(Serialize)]
struct DatasetManifest {
    format_version: u32,
    seed: u64,
    config_sha256: String,
    record_count: usize,
}

pub fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>, n: Option<usize>) -> Result<()> {
    let mut config = load_config(config, seed)?;
    if let Some(n) = n {
        config.synthetic.n_enterprises = n;
    }
    config.synthetic.validate()?;
    let records = generate_synthetic(&config.synthetic, config.seed)?;
    save_dataset(out, &records)?;
    let manifest = DatasetManifest {
        format_version: ARTIFACT_FORMAT_VERSION,
        seed: config.seed,
        config_sha256: config.hash()?,
        record_count: records.len(),
    };
    write_json(&sibling(out, "manifest.json"), &manifest)?;
    write_text(&sibling(out, "config.toml"), &config.to_toml()?)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn write_run_artifacts(run: &TrainingRun, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    save_checkpoint(&out_dir.join("checkpoint.json"), &run.model, &run.data.stats, &run.config)?;
    write_csv(&run.outcome.curve, &out_dir.join("loss_curve.csv"))?;
    write_svg(&run.outcome.curve, &out_dir.join("loss_curve.svg"))?;
    write_json(&out_dir.join("run_summary.json"), &run.summary)?;
    write_text(&out_dir.join("config.toml"), &run.config.to_toml()?)
}

pub fn train(config: Option<&Path>, data: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let config = load_config(config, seed)?;
    let records = load_records(data)?;
    let run = workflow::train_hybrid(&records, &config)?;
    write_run_artifacts(&run, out_dir)?;

    let s = &run.summary;
    println!("split: {}/{}/{}", s.split.train, s.split.validation, s.split.test);
    println!("epochs: {} (best {})", s.epochs_run, s.best_epoch);
    match &s.plateau {
        Some(p) => println!("validation loss plateau at epoch {}", p.convergence_epoch),
        None => println!("validation loss plateau: not detected"),
    }
    if !s.warnings.is_empty() {
        println!("{} warning(s) recorded in run_summary.json", s.warnings.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    format_version: u32,
    split: SplitChoice,
    model: &'a str,
    metrics: &'a MetricsReport,
}

const HYBRID_ROW: &str = "Hybrid (DNN+Transformer+AE)";

pub fn evaluate(
    checkpoint: &Path,
    data: &Path,
    split: SplitChoice,
    policy: Option<LevelPolicy>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let mut loaded = load_checkpoint(checkpoint)?;
    if let Some(p) = policy {
        p.validate()?;
        loaded.config.policy = p;
    }
    let records = select_split(&load_records(data)?, loaded.config.seed, split)?;
    let prepared = apply_preprocessor(&loaded.stats, &records)?;
    if let Some(r) = prepared.rejects.first() {
        return Err(Error::Validation(format!("record {} is incompatible with the checkpoint: {}", records[r.line - 1].id, r.reason)));
    }
    let report = workflow::evaluate(&loaded.model, &prepared, &loaded.config.policy)?;

    let out_dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out_dir.as_os_str().is_empty() {
        create_dir(&out_dir)?;
    }
    let file = MetricsFile {
        format_version: ARTIFACT_FORMAT_VERSION,
        split,
        model: HYBRID_ROW,
        metrics: &report,
    };
    write_json(&out_dir.join("metrics.json"), &file)?;
    write_text(&out_dir.join("metrics.config.toml"), &loaded.config.to_toml()?)?;
    println!("records: {}", report.count);
    print!("{}", format_table(&[(HYBRID_ROW, &report)]));
    Ok(())
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    probs: [f64; 3],
    level: RiskLevel,
    reconstruction_error: f64,
    anomaly_flag: Option<bool>,
    label: Option<RiskLevel>,
    warnings: &'a [String],
}

pub fn score(checkpoint: &Path, input: &Path, policy: Option<LevelPolicy>, out: Option<&Path>) -> Result<()> {
    let mut loaded = load_checkpoint(checkpoint)?;
    if let Some(p) = policy {
        p.validate()?;
        loaded.config.policy = p;
    }
    let records = load_records(input)?;
    let prepared = apply_preprocessor(&loaded.stats, &records)?;
    if let Some(r) = prepared.rejects.first() {
        return Err(Error::Validation(format!("record {} cannot be scored: {}", records[r.line - 1].id, r.reason)));
    }
    let predictions = match &prepared.inputs {
        Some(inputs) => loaded.model.predict(inputs, &loaded.config.policy)?,
        None => Vec::new(),
    };

    let mut text = String::new();
    for (i, p) in predictions.iter().enumerate() {
        let line = ScoreLine {
            id: &prepared.ids[i],
            probs: p.probs,
            level: p.level,
            reconstruction_error: p.reconstruction_error,
            anomaly_flag: p.anomaly_flag,
            label: prepared.labels[i],
            warnings: &prepared.warnings[i],
        };
        text.push_str(&json::to_string(&line, false)?);
        text.push('\n');
    }
    match out {
        Some(path) => {
            write_text(path, &text)?;
            write_text(&sibling(path, "config.toml"), &loaded.config.to_toml()?)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())
                .and_then(|()| lock.flush())
                .map_err(io_err(Path::new("<stdout>")))?;
        }
    }
    Ok(())
}

pub fn compare(config: Option<&Path>, data: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let config = load_config(config, seed)?;
    let records = load_records(data)?;
    let run = workflow::train_hybrid(&records, &config)?;
    let comparison = workflow::compare(&run)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join("compare.json"), &comparison)?;
    write_text(&out_dir.join("config.toml"), &run.config.to_toml()?)?;
    let rows: Vec<(&str, &MetricsReport)> = comparison.rows.iter().map(|r| (r.model.as_str(), &r.test)).collect();
    print!("{}", format_table(&rows));
    Ok(())
}
