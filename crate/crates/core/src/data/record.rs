//! Enterprise records and the JSONL dataset format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::RiskLevel;

/// Version written to, and required of, every dataset line.
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Names of the quarterly channels, in tensor order.
pub const CHANNELS: [&str; 4] = ["revenue", "profit", "tax_paid", "invoice_count"];

/// Quarterly financial series, oldest quarter first. `None` marks a missing
/// observation (`null` on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterlySeries {
    pub revenue: Vec<Option<f64>>,
    pub profit: Vec<Option<f64>>,
    pub tax_paid: Vec<Option<f64>>,
    pub invoice_count: Vec<Option<f64>>,
}

impl QuarterlySeries {
    pub fn channels(&self) -> [&[Option<f64>]; 4] {
        [&self.revenue, &self.profit, &self.tax_paid, &self.invoice_count]
    }

    pub fn len(&self) -> usize {
        self.revenue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revenue.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnterpriseRecord {
    pub id: String,
    pub industry: String,
    pub region: String,
    /// Employees.
    pub company_size: f64,
    pub registered_capital: f64,
    pub compliance_score: f64,
    /// Calendar quarter index of the last observation in `series`.
    pub end_quarter: u32,
    #[serde(flatten)]
    pub series: QuarterlySeries,
    pub label: Option<RiskLevel>,
}

impl EnterpriseRecord {
    /// Checks the record invariants; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("field `id`: must be nonempty".into());
        }
        let scalars = [
            ("company_size", self.company_size),
            ("registered_capital", self.registered_capital),
            ("compliance_score", self.compliance_score),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(format!("field `{name}`: must be finite"));
            }
        }
        if self.company_size <= 0.0 {
            return Err("field `company_size`: must be positive".into());
        }
        if self.registered_capital < 0.0 {
            return Err("field `registered_capital`: must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.compliance_score) {
            return Err("field `compliance_score`: must lie in [0, 1]".into());
        }
        let len = self.series.len();
        for (name, values) in CHANNELS.iter().zip(self.series.channels()) {
            if values.len() != len {
                return Err(format!("field `{name}`: length {} differs from revenue length {len}", values.len()));
            }
            let present: Vec<f64> = values.iter().flatten().copied().collect();
            if present.len() < 2 {
                return Err(format!("field `{name}`: fewer than 2 non-missing quarters"));
            }
            if present.iter().any(|v| !v.is_finite()) {
                return Err(format!("field `{name}`: values must be finite"));
            }
            let nonnegative = matches!(*name, "revenue" | "invoice_count");
            if nonnegative && present.iter().any(|&v| v < 0.0) {
                return Err(format!("field `{name}`: values must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// A line that could not be turned into a valid record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<EnterpriseRecord>,
    pub rejects: Vec<Reject>,
}

impl LoadReport {
    /// All records, or a validation error listing every reject.
    pub fn into_strict(self) -> Result<Vec<EnterpriseRecord>> {
        if self.rejects.is_empty() {
            return Ok(self.records);
        }
        let listing: Vec<String> = self
            .rejects
            .iter()
            .map(|r| format!("line {}: {}", r.line, r.reason))
            .collect();
        Err(Error::Validation(format!(
            "{} rejected record(s):\n{}",
            self.rejects.len(),
            listing.join("\n")
        )))
    }
}

/// Every field optional so that a missing one is reported by name.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    format_version: Option<u32>,
    id: Option<String>,
    industry: Option<String>,
    region: Option<String>,
    company_size: Option<f64>,
    registered_capital: Option<f64>,
    compliance_score: Option<f64>,
    end_quarter: Option<u32>,
    revenue: Option<Vec<Option<f64>>>,
    profit: Option<Vec<Option<f64>>>,
    tax_paid: Option<Vec<Option<f64>>>,
    invoice_count: Option<Vec<Option<f64>>>,
    #[serde(default)]
    label: Option<RiskLevel>,
}

fn required<T>(value: Option<T>, name: &str) -> std::result::Result<T, String> {
    value.ok_or_else(|| format!("field `{name}`: missing"))
}

impl RawRecord {
    fn into_record(self) -> std::result::Result<EnterpriseRecord, String> {
        match self.format_version {
            Some(DATASET_FORMAT_VERSION) => {}
            Some(v) => return Err(format!("field `format_version`: unsupported version {v}")),
            None => return Err("field `format_version`: missing".into()),
        }
        Ok(EnterpriseRecord {
            id: required(self.id, "id")?,
            industry: required(self.industry, "industry")?,
            region: required(self.region, "region")?,
            company_size: required(self.company_size, "company_size")?,
            registered_capital: required(self.registered_capital, "registered_capital")?,
            compliance_score: required(self.compliance_score, "compliance_score")?,
            end_quarter: required(self.end_quarter, "end_quarter")?,
            series: QuarterlySeries {
                revenue: required(self.revenue, "revenue")?,
                profit: required(self.profit, "profit")?,
                tax_paid: required(self.tax_paid, "tax_paid")?,
                invoice_count: required(self.invoice_count, "invoice_count")?,
            },
            label: self.label,
        })
    }
}

/// Parses one JSONL line into a validated record.
pub fn parse_record(line: &str) -> std::result::Result<EnterpriseRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let record = raw.into_record()?;
    record.validate()?;
    Ok(record)
}

/// Reads a dataset from any buffered source. Blank lines are ignored;
/// duplicate ids are rejected.
pub fn read_dataset(reader: impl BufRead, source: &Path) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(record) if !seen.insert(record.id.clone()) => report.rejects.push(Reject {
                line: i + 1,
                reason: format!("field `id`: duplicate id {}", record.id),
            }),
            Ok(record) => report.records.push(record),
            Err(reason) => report.rejects.push(Reject { line: i + 1, reason }),
        }
    }
    Ok(report)
}

pub fn load_dataset(path: &Path) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path)
}

#[derive(Serialize)]
struct RecordLine<'a> {
    format_version: u32,
    #[serde(flatten)]
    record: &'a EnterpriseRecord,
}

/// One compact JSON document per line.
pub fn write_dataset(mut writer: impl Write, records: &[EnterpriseRecord]) -> Result<()> {
    for record in records {
        let line = RecordLine {
            format_version: DATASET_FORMAT_VERSION,
            record,
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, records: &[EnterpriseRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_dataset(&mut writer, records)?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Flat inspection export: one row per enterprise-quarter. Not read back.
pub fn export_csv(path: &Path, records: &[EnterpriseRecord]) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidInput(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record([
        "id", "industry", "region", "company_size", "registered_capital", "compliance_score",
        "label", "quarter", "revenue", "profit", "tax_paid", "invoice_count",
    ])
    .map_err(io)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let len = r.series.len();
        for q in 0..len {
            let quarter = i64::from(r.end_quarter) - (len - 1 - q) as i64;
            let label = r.label.map(|l| l.name().to_string()).unwrap_or_default();
            w.write_record([
                r.id.clone(),
                r.industry.clone(),
                r.region.clone(),
                r.company_size.to_string(),
                r.registered_capital.to_string(),
                r.compliance_score.to_string(),
                label,
                quarter.to_string(),
                cell(r.series.revenue[q]),
                cell(r.series.profit[q]),
                cell(r.series.tax_paid[q]),
                cell(r.series.invoice_count[q]),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
