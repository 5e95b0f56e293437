//! Interpolation, z-scoring and one-hot encoding of records into tensors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::{EnterpriseRecord, Reject, CHANNELS};
use crate::error::{Error, Result};
use crate::fusion::RiskLevel;
use crate::model::Inputs;
use crate::tensor::Tensor;

pub const STATS_FORMAT_VERSION: u32 = 1;
pub const UNKNOWN_CATEGORY: &str = "__unknown__";
pub const NUMERIC_FEATURES: [&str; 3] = ["company_size", "registered_capital", "compliance_score"];

/// Fills interior gaps linearly and extends the first and last present
/// values over leading and trailing gaps.
pub fn interpolate_missing(values: &[Option<f64>]) -> Result<Vec<f64>> {
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    if present.len() < 2 {
        return Err(Error::Validation(format!(
            "interpolation needs at least 2 present values, got {}",
            present.len()
        )));
    }
    let mut out = vec![0.0; values.len()];
    let (first_i, first_v) = present[0];
    let (last_i, last_v) = present[present.len() - 1];
    out[..first_i].fill(first_v);
    out[last_i..].fill(last_v);
    for pair in present.windows(2) {
        let ((i0, v0), (i1, v1)) = (pair[0], pair[1]);
        for (j, slot) in out.iter_mut().enumerate().take(i1).skip(i0) {
            *slot = v0 + (v1 - v0) * (j - i0) as f64 / (i1 - i0) as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    /// Population mean and standard deviation; a zero spread becomes 1.
    fn fit(name: &str, values: &[f64]) -> (Self, bool) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let constant = !(std > 0.0) || !std.is_finite();
        let stats = FeatureStats {
            name: name.to_string(),
            mean,
            std: if constant { 1.0 } else { std },
        };
        (stats, constant)
    }

    pub fn scale(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }
}

/// Everything learned from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessStats {
    pub format_version: u32,
    pub seq_len: usize,
    pub numeric: Vec<FeatureStats>,
    pub channels: Vec<FeatureStats>,
    /// Sorted training categories followed by [`UNKNOWN_CATEGORY`].
    pub industry_vocab: Vec<String>,
    pub region_vocab: Vec<String>,
    /// Column names of `X_s`, in order.
    pub static_columns: Vec<String>,
    /// Features whose training spread was zero and were given std 1.
    pub constant_features: Vec<String>,
}

impl PreprocessStats {
    pub fn static_dim(&self) -> usize {
        self.static_columns.len()
    }

    pub fn series_dim(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let width = NUMERIC_FEATURES.len() + self.industry_vocab.len() + self.region_vocab.len();
        let ok = self.seq_len > 0
            && self.numeric.len() == NUMERIC_FEATURES.len()
            && self.channels.len() == CHANNELS.len()
            && self.static_columns.len() == width
            && self.industry_vocab.last().map(String::as_str) == Some(UNKNOWN_CATEGORY)
            && self.region_vocab.last().map(String::as_str) == Some(UNKNOWN_CATEGORY)
            && self.numeric.iter().chain(&self.channels).all(|f| f.std > 0.0 && f.mean.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Corrupt("preprocessing statistics are inconsistent".into()))
        }
    }
}

fn vocabulary<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut vocab: Vec<String> = values.collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    vocab.push(UNKNOWN_CATEGORY.to_string());
    vocab
}

/// Most recent `seq_len` quarters, interpolated per channel.
fn complete_series(record: &EnterpriseRecord, seq_len: usize) -> Result<Vec<Vec<f64>>> {
    if record.series.len() > seq_len {
        return Err(Error::Validation(format!(
            "series length {} exceeds seq_len {seq_len}",
            record.series.len()
        )));
    }
    record.series.channels().iter().zip(CHANNELS).map(|(values, name)| {
        interpolate_missing(values).map_err(|e| Error::Validation(format!("field `{name}`: {e}")))
    }).collect()
}

/// Fits z-score statistics and vocabularies on training records only.
pub fn fit_preprocessor(train: &[EnterpriseRecord], seq_len: usize) -> Result<PreprocessStats> {
    if train.is_empty() {
        return Err(Error::Fit("training split is empty".into()));
    }
    if seq_len == 0 {
        return Err(Error::Fit("seq_len must be ≥ 1".into()));
    }
    let mut constant_features = Vec::new();
    let mut fit = |name: &str, values: &[f64]| {
        let (stats, constant) = FeatureStats::fit(name, values);
        if constant {
            log::warn!("feature `{name}` is constant on the training split; using std 1");
            constant_features.push(name.to_string());
        }
        stats
    };

    let columns: [Vec<f64>; 3] = [
        train.iter().map(|r| r.company_size).collect(),
        train.iter().map(|r| r.registered_capital).collect(),
        train.iter().map(|r| r.compliance_score).collect(),
    ];
    let numeric: Vec<FeatureStats> = NUMERIC_FEATURES.iter().zip(&columns).map(|(n, v)| fit(n, v)).collect();

    let mut channel_values = vec![Vec::new(); CHANNELS.len()];
    for record in train {
        let series = complete_series(record, seq_len).map_err(|e| Error::Fit(format!("record {}: {e}", record.id)))?;
        for (acc, values) in channel_values.iter_mut().zip(series) {
            acc.extend(values);
        }
    }
    let channels = CHANNELS.iter().zip(&channel_values).map(|(n, v)| fit(n, v)).collect();

    let industry_vocab = vocabulary(train.iter().map(|r| r.industry.as_str()));
    let region_vocab = vocabulary(train.iter().map(|r| r.region.as_str()));
    let static_columns = NUMERIC_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(industry_vocab.iter().map(|v| format!("industry={v}")))
        .chain(region_vocab.iter().map(|v| format!("region={v}")))
        .collect();
    Ok(PreprocessStats {
        format_version: STATS_FORMAT_VERSION,
        seq_len,
        numeric,
        channels,
        industry_vocab,
        region_vocab,
        static_columns,
        constant_features,
    })
}

/// Tensors for the records that passed, plus what happened to the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub ids: Vec<String>,
    /// `None` when no record was encoded.
    pub inputs: Option<Inputs>,
    pub labels: Vec<Option<RiskLevel>>,
    /// Per-record notes, e.g. categories mapped to the unknown slot.
    pub warnings: Vec<Vec<String>>,
    /// Indices into the input slice (as `line`, 1-based) of excluded records.
    pub rejects: Vec<Reject>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn inputs(&self) -> Result<&Inputs> {
        self.inputs
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no records were encoded".into()))
    }

    /// Class indices, failing if any record is unlabeled.
    pub fn label_indices(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .zip(&self.ids)
            .map(|(l, id)| {
                l.map(RiskLevel::index)
                    .ok_or_else(|| Error::InvalidInput(format!("record {id} has no label")))
            })
            .collect()
    }
}

fn one_hot(vocab: &[String], value: &str, field: &str, out: &mut Vec<f64>, warnings: &mut Vec<String>) {
    let idx = vocab[..vocab.len() - 1].iter().position(|v| v == value).unwrap_or_else(|| {
        warnings.push(format!("unknown {field} `{value}` mapped to {UNKNOWN_CATEGORY}"));
        vocab.len() - 1
    });
    out.extend((0..vocab.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
}

/// Maps records to `X_s [n × width]`, `X_t [n × seq_len × 4]` and the
/// padding mask. Shorter series are left-padded with zeros.
pub fn apply_preprocessor(stats: &PreprocessStats, records: &[EnterpriseRecord]) -> Result<Prepared> {
    stats.validate()?;
    let (seq, ch) = (stats.seq_len, stats.series_dim());
    let mut xs = Vec::new();
    let mut xt = Vec::new();
    let mut mask = Vec::new();
    let mut prepared = Prepared {
        ids: Vec::new(),
        inputs: None,
        labels: Vec::new(),
        warnings: Vec::new(),
        rejects: Vec::new(),
    };
    for (i, record) in records.iter().enumerate() {
        let series = record
            .validate()
            .map_err(Error::Validation)
            .and_then(|()| complete_series(record, seq));
        let series = match series {
            Ok(s) => s,
            Err(e) => {
                prepared.rejects.push(Reject {
                    line: i + 1,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let mut warnings = Vec::new();
        let raw = [record.company_size, record.registered_capital, record.compliance_score];
        xs.extend(stats.numeric.iter().zip(raw).map(|(f, v)| f.scale(v)));
        one_hot(&stats.industry_vocab, &record.industry, "industry", &mut xs, &mut warnings);
        one_hot(&stats.region_vocab, &record.region, "region", &mut xs, &mut warnings);

        let pad = seq - record.series.len();
        xt.extend(std::iter::repeat_n(0.0, pad * ch));
        for t in 0..record.series.len() {
            xt.extend(series.iter().zip(&stats.channels).map(|(values, f)| f.scale(values[t])));
        }
        mask.extend((0..seq).map(|t| if t < pad { 0.0 } else { 1.0 }));

        prepared.ids.push(record.id.clone());
        prepared.labels.push(record.label);
        prepared.warnings.push(warnings);
    }
    let n = prepared.ids.len();
    if n > 0 {
        prepared.inputs = Some(Inputs {
            x_s: Tensor::new(vec![n, stats.static_dim()], xs)?,
            x_t: Tensor::new(vec![n, seq, ch], xt)?,
            mask: Tensor::new(vec![n, seq], mask)?,
        });
    }
    Ok(prepared)
}
