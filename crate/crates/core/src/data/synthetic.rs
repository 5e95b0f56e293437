//! Seeded generator of enterprise records with planted risk regimes.
//!
//! Firm `i` draws everything from its own ChaCha8 substream
//! `stream(seed, Synthetic, i)`, so output is independent of generation
//! order and can be produced in parallel. Per firm, in draw order:
//!
//! 1. regime from `regime_mix`, industry from `industry_mix`, region uniform;
//! 2. employees ~ LogNormal(industry size, 0.5); capital and compliance score;
//! 3. end quarter uniform in 0..4 and, with `short_history_rate`, a history
//!    shorter than `seq_len`;
//! 4. revenue: seasonal AR(1) in log space around a size-scaled base;
//!    profit = margin·revenue; tax = rate·max(profit, 0); invoices ∝ revenue;
//! 5. regime effects (see [`Regime`]); label flips with `label_noise`;
//!    entries masked with `missing_rate`, keeping ≥ 2 per channel.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{EnterpriseRecord, QuarterlySeries};
use crate::error::{Error, Result};
use crate::fusion::RiskLevel;
use crate::rng::{stream, Purpose, Rng64};

pub const INDUSTRIES: [&str; 5] = ["manufacturing", "retail", "internet_services", "construction", "wholesale"];
pub const REGIONS: [&str; 5] = ["central", "east", "north", "south", "west"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndustryMix {
    pub manufacturing: f64,
    pub retail: f64,
    pub internet_services: f64,
    pub construction: f64,
    pub wholesale: f64,
}

impl Default for IndustryMix {
    fn default() -> Self {
        IndustryMix {
            manufacturing: 0.30,
            retail: 0.25,
            internet_services: 0.15,
            construction: 0.15,
            wholesale: 0.15,
        }
    }
}

impl IndustryMix {
    fn weights(&self) -> [f64; 5] {
        [self.manufacturing, self.retail, self.internet_services, self.construction, self.wholesale]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeMix {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl Default for RegimeMix {
    fn default() -> Self {
        RegimeMix {
            low: 0.60,
            medium: 0.25,
            high: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_enterprises: usize,
    pub seq_len: usize,
    pub industry_mix: IndustryMix,
    pub regime_mix: RegimeMix,
    pub label_noise: f64,
    pub missing_rate: f64,
    /// Share of firms observed for fewer than `seq_len` quarters.
    pub short_history_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_enterprises: 12_000,
            seq_len: 12,
            industry_mix: IndustryMix::default(),
            regime_mix: RegimeMix::default(),
            label_noise: 0.05,
            missing_rate: 0.03,
            short_history_rate: 0.10,
        }
    }
}

fn check_mix(name: &str, weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("synthetic.{name} must be weights in [0, 1] summing to 1")));
    }
    Ok(())
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        check_mix("industry_mix", &self.industry_mix.weights())?;
        let r = &self.regime_mix;
        check_mix("regime_mix", &[r.low, r.medium, r.high])?;
        for (name, v) in [
            ("label_noise", self.label_noise),
            ("missing_rate", self.missing_rate),
            ("short_history_rate", self.short_history_rate),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("synthetic.{name} {v} must lie in [0, 1)")));
            }
        }
        if self.seq_len < 8 {
            return Err(Error::Config("synthetic.seq_len must be ≥ 8 to host the planted regimes".into()));
        }
        Ok(())
    }
}

/// Industry-conditioned generation parameters.
struct Profile {
    /// Median employees.
    employees: f64,
    /// Quarterly revenue per employee, thousands.
    revenue_per_employee: f64,
    margin: f64,
    tax_rate: f64,
    /// Average invoice value, thousands.
    invoice_value: f64,
    seasonal_amplitude: f64,
    /// Calendar quarter of the seasonal peak.
    peak_quarter: u32,
}

const PROFILES: [Profile; 5] = [
    Profile { employees: 120.0, revenue_per_employee: 60.0, margin: 0.12, tax_rate: 0.25, invoice_value: 25.0, seasonal_amplitude: 0.06, peak_quarter: 2 },
    Profile { employees: 80.0, revenue_per_employee: 100.0, margin: 0.09, tax_rate: 0.25, invoice_value: 8.0, seasonal_amplitude: 0.15, peak_quarter: 3 },
    Profile { employees: 80.0, revenue_per_employee: 60.0, margin: 0.18, tax_rate: 0.25, invoice_value: 8.0, seasonal_amplitude: 0.04, peak_quarter: 3 },
    Profile { employees: 150.0, revenue_per_employee: 70.0, margin: 0.10, tax_rate: 0.25, invoice_value: 120.0, seasonal_amplitude: 0.12, peak_quarter: 1 },
    Profile { employees: 80.0, revenue_per_employee: 150.0, margin: 0.07, tax_rate: 0.25, invoice_value: 40.0, seasonal_amplitude: 0.08, peak_quarter: 2 },
];

/// Planted behaviour from which the label derives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// No manipulation.
    Compliant,
    /// Tax deflated by a factor in [0.75, 0.9] on 2 or 3 quarters.
    ModerateUnderreporting,
    /// Tax deflated by a factor in [0.4, 0.7] on 4 to 8 quarters, and
    /// invoice counts multiplied by [1.8, 3] on 2 to 4 quarters regardless
    /// of revenue.
    AggressiveUnderreporting,
}

impl Regime {
    pub fn level(self) -> RiskLevel {
        match self {
            Regime::Compliant => RiskLevel::Low,
            Regime::ModerateUnderreporting => RiskLevel::Medium,
            Regime::AggressiveUnderreporting => RiskLevel::High,
        }
    }
}

fn categorical(rng: &mut Rng64, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Guard against weights summing to slightly under 1.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn normal(rng: &mut Rng64) -> f64 {
    StandardNormal.sample(rng)
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

/// Record for firm `index` together with its true regime.
pub fn generate_firm(cfg: &SyntheticConfig, seed: u64, index: u64) -> (EnterpriseRecord, Regime) {
    let mut rng = stream(seed, Purpose::Synthetic, index);
    let r = &cfg.regime_mix;
    let regime = [Regime::Compliant, Regime::ModerateUnderreporting, Regime::AggressiveUnderreporting]
        [categorical(&mut rng, &[r.low, r.medium, r.high])];
    let industry = categorical(&mut rng, &cfg.industry_mix.weights());
    let region = rng.random_range(0..REGIONS.len());
    let p = &PROFILES[industry];

    let employees = LogNormal::new(p.employees.ln(), 0.3).expect("valid sigma").sample(&mut rng).round().max(1.0);
    let capital = employees * 8.0 * LogNormal::new(0.0, 0.4).expect("valid sigma").sample(&mut rng);
    let compliance_mean = match regime {
        Regime::Compliant => 0.78,
        Regime::ModerateUnderreporting => 0.72,
        Regime::AggressiveUnderreporting => 0.64,
    };
    let compliance = (compliance_mean + 0.12 * normal(&mut rng)).clamp(0.0, 1.0);

    let end_quarter = rng.random_range(0..4u32);
    let len = if rng.random::<f64>() < cfg.short_history_rate {
        rng.random_range(8..cfg.seq_len)
    } else {
        cfg.seq_len
    };

    let base = employees * p.revenue_per_employee * (0.1 * normal(&mut rng)).exp();
    let firm_margin = p.margin + 0.02 * normal(&mut rng);
    let mut deviation = 0.15 * normal(&mut rng);
    let mut revenue = Vec::with_capacity(len);
    let mut profit = Vec::with_capacity(len);
    let mut tax = Vec::with_capacity(len);
    let mut invoices = Vec::with_capacity(len);
    for t in 0..len {
        let calendar = (end_quarter + 4 * len as u32 - (len - 1 - t) as u32) % 4;
        let phase = std::f64::consts::FRAC_PI_2 * (calendar as f64 - p.peak_quarter as f64);
        deviation = 0.6 * deviation + 0.08 * normal(&mut rng);
        let rev = base * (deviation + p.seasonal_amplitude * phase.cos()).exp();
        let pro = rev * (firm_margin + 0.01 * normal(&mut rng));
        let tx = p.tax_rate * pro.max(0.0) * (1.0 + 0.015 * normal(&mut rng));
        let inv = rev / p.invoice_value * (0.05 * normal(&mut rng)).exp();
        revenue.push(rev);
        profit.push(pro);
        tax.push(tx.max(0.0));
        invoices.push(inv);
    }

    match regime {
        Regime::Compliant => {}
        Regime::ModerateUnderreporting => {
            let k = rng.random_range(2..=3);
            for q in sample(&mut rng, len, k) {
                tax[q] *= rng.random_range(0.75..=0.9);
            }
        }
        Regime::AggressiveUnderreporting => {
            let k = rng.random_range(4..=8.min(len));
            for q in sample(&mut rng, len, k) {
                tax[q] *= rng.random_range(0.4..=0.7);
            }
            let spikes = rng.random_range(2..=4);
            for q in sample(&mut rng, len, spikes) {
                invoices[q] *= rng.random_range(1.8..=3.0);
            }
        }
    }

    let mut label = regime.level();
    if rng.random::<f64>() < cfg.label_noise {
        let others: Vec<RiskLevel> = RiskLevel::ALL.into_iter().filter(|&l| l != label).collect();
        label = others[rng.random_range(0..2)];
    }

    let channels = [revenue, profit, tax, invoices].map(|values| {
        let mut missing: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < cfg.missing_rate).collect();
        if missing.iter().filter(|&&m| !m).count() < 2 {
            missing[len - 2..].fill(false);
        }
        values
            .into_iter()
            .zip(missing)
            .map(|(x, m)| (!m).then_some(x))
            .collect::<Vec<Option<f64>>>()
    });
    let [revenue, profit, tax, invoices] = channels;
    let channels = [
        revenue.into_iter().map(|v| v.map(|x| round_to(x, 3))).collect(),
        profit.into_iter().map(|v| v.map(|x| round_to(x, 3))).collect(),
        tax.into_iter().map(|v| v.map(|x| round_to(x, 3))).collect(),
        invoices.into_iter().map(|v| v.map(f64::round)).collect::<Vec<_>>(),
    ];
    let [revenue, profit, tax_paid, invoice_count] = channels;
    let record = EnterpriseRecord {
        id: format!("E{index:06}"),
        industry: INDUSTRIES[industry].to_string(),
        region: REGIONS[region].to_string(),
        company_size: employees,
        registered_capital: round_to(capital, 3),
        compliance_score: round_to(compliance, 4),
        end_quarter,
        series: QuarterlySeries {
            revenue,
            profit,
            tax_paid,
            invoice_count,
        },
        label: Some(label),
    };
    (record, regime)
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<EnterpriseRecord>> {
    cfg.validate()?;
    Ok((0..cfg.n_enterprises as u64).map(|i| generate_firm(cfg, seed, i).0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SyntheticConfig {
        SyntheticConfig {
            n_enterprises: n,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn zero_firms_is_empty() {
        assert!(generate_synthetic(&small(0), 1).unwrap().is_empty());
    }

    #[test]
    fn reproducible_and_valid() {
        let a = generate_synthetic(&small(100), 7).unwrap();
        let b = generate_synthetic(&small(100), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&small(100), 8).unwrap());
        for r in &a {
            r.validate().unwrap();
            assert!(r.series.len() >= 8 && r.series.len() <= 12);
        }
        // Firm i does not depend on how many firms are generated.
        assert_eq!(generate_synthetic(&small(10), 7).unwrap()[..], a[..10]);
    }

    #[test]
    fn regime_proportions_follow_mix() {
        let cfg = small(12_000);
        let mut counts = [0usize; 3];
        for i in 0..cfg.n_enterprises as u64 {
            counts[generate_firm(&cfg, 20240601, i).1.level().index()] += 1;
        }
        for (c, expected) in counts.iter().zip([0.60, 0.25, 0.15]) {
            assert!((*c as f64 / 12_000.0 - expected).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn planted_deflation_is_visible() {
        let cfg = SyntheticConfig { missing_rate: 0.0, label_noise: 0.0, ..small(300) };
        let mut min_ratio = [f64::INFINITY; 3];
        for i in 0..300 {
            let (r, regime) = generate_firm(&cfg, 3, i);
            let rate = PROFILES[INDUSTRIES.iter().position(|&n| n == r.industry).unwrap()].tax_rate;
            let worst = r.series.tax_paid.iter().zip(&r.series.profit)
                .filter_map(|(t, p)| Some((t.unwrap(), p.unwrap())))
                .filter(|(_, p)| *p > 1.0)
                .map(|(t, p)| t / (rate * p))
                .fold(f64::INFINITY, f64::min);
            let k = regime.level().index();
            min_ratio[k] = min_ratio[k].min(worst);
        }
        assert!(min_ratio[0] > 0.85, "{min_ratio:?}");
        assert!(min_ratio[2] < 0.75, "{min_ratio:?}");
    }

    #[test]
    fn invalid_mixes_rejected() {
        let mut cfg = small(1);
        cfg.regime_mix.low = 0.9;
        assert!(cfg.validate().is_err());
        let cfg = SyntheticConfig { missing_rate: 1.0, ..small(1) };
        assert!(cfg.validate().is_err());
    }
}
