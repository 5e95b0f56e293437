//! Confusion-matrix metrics and report formatting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{RiskLevel, NUM_CLASSES};

/// Counts with rows = true class and columns = predicted class, both in
/// Low, Medium, High order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn from_pairs(truth: &[RiskLevel], predicted: &[RiskLevel]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim("confusion pairs", truth.len(), predicted.len()));
        }
        let mut m = ConfusionMatrix::default();
        for (t, p) in truth.iter().zip(predicted) {
            m.0[t.index()][p.index()] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.0[c][c]
    }

    pub fn support(&self, c: usize) -> u64 {
        self.0[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.0.iter().map(|row| row[c]).sum()
    }

    fn nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::Evaluation("confusion matrix is empty".into()))
        } else {
            Ok(())
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.nonempty()?;
        Ok(ratio((0..NUM_CLASSES).map(|c| self.0[c][c]).sum(), self.total()))
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.predicted(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.support(c))
    }

    /// `2TP / (2TP + FP + FN)`, which equals the harmonic mean of precision
    /// and recall and is 0 when the class is never true nor predicted.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.true_positives(c);
        ratio(2 * tp, self.support(c) + self.predicted(c))
    }

    pub fn macro_recall(&self) -> Result<f64> {
        self.nonempty()?;
        Ok((0..NUM_CLASSES).map(|c| self.recall(c)).sum::<f64>() / NUM_CLASSES as f64)
    }

    pub fn macro_f1(&self) -> Result<f64> {
        self.nonempty()?;
        Ok((0..NUM_CLASSES).map(|c| self.f1(c)).sum::<f64>() / NUM_CLASSES as f64)
    }
}

pub fn macro_f1(confusion: &ConfusionMatrix) -> Result<f64> {
    confusion.macro_f1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub level: RiskLevel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: u64,
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    /// Share of records of each true class raising the anomaly flag; `None`
    /// for a class without records or when no threshold is available.
    pub anomaly_flag_rate: [Option<f64>; NUM_CLASSES],
}

impl MetricsReport {
    /// `flags` holds the anomaly flag per record, if one was computed.
    pub fn new(truth: &[RiskLevel], predicted: &[RiskLevel], flags: &[Option<bool>]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Evaluation("no labeled records to evaluate".into()));
        }
        if flags.len() != truth.len() {
            return Err(Error::dim("anomaly flags", truth.len(), flags.len()));
        }
        let confusion = ConfusionMatrix::from_pairs(truth, predicted)?;
        let per_class = RiskLevel::ALL
            .iter()
            .map(|&level| {
                let c = level.index();
                ClassMetrics {
                    level,
                    precision: confusion.precision(c),
                    recall: confusion.recall(c),
                    f1: confusion.f1(c),
                    support: confusion.support(c),
                }
            })
            .collect();
        let mut anomaly_flag_rate = [None; NUM_CLASSES];
        for level in RiskLevel::ALL {
            let of_class: Vec<Option<bool>> = truth
                .iter()
                .zip(flags)
                .filter(|(t, _)| **t == level)
                .map(|(_, f)| *f)
                .collect();
            if !of_class.is_empty() && of_class.iter().all(Option::is_some) {
                let flagged = of_class.iter().filter(|f| **f == Some(true)).count();
                anomaly_flag_rate[level.index()] = Some(flagged as f64 / of_class.len() as f64);
            }
        }
        Ok(MetricsReport {
            count: confusion.total(),
            accuracy: confusion.accuracy()?,
            macro_recall: confusion.macro_recall()?,
            macro_f1: confusion.macro_f1()?,
            per_class,
            confusion,
            anomaly_flag_rate,
        })
    }
}

/// Aligned plain-text table with one row per model.
pub fn format_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | Accuracy | Recall | F1-score", "Model");
    let _ = writeln!(out, "{:-<width$}-+----------+--------+---------", "");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>8.4} | {:>6.4} | {:>8.4}",
            name, r.accuracy, r.macro_recall, r.macro_f1
        );
    }
    out
}
