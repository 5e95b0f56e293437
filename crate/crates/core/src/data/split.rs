//! Stratified train/validation/test splitting.
//!
//! Records are grouped by `(label, end_quarter)`. Each stratum is shuffled
//! with the seeded split stream and cut so that every stratum's share of each
//! split is within one record of its exact ratio while the global split sizes
//! equal the rounded global ratios.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::EnterpriseRecord;
use crate::error::{Error, Result};
use crate::fusion::RiskLevel;
use crate::rng::{stream, Purpose};

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];
/// Strata smaller than this are merged into a neighbour.
pub const MIN_STRATUM: usize = 3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<EnterpriseRecord>,
    pub validation: Vec<EnterpriseRecord>,
    pub test: Vec<EnterpriseRecord>,
    pub warnings: Vec<String>,
}

/// Sizes plus a digest of the ids in each part, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub sha256: String,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let mut hasher = Sha256::new();
        for (tag, part) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            hasher.update(tag.as_bytes());
            for r in part {
                hasher.update([0u8]);
                hasher.update(r.id.as_bytes());
            }
            hasher.update([1u8]);
        }
        SplitManifest {
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
            sha256: hex::encode(hasher.finalize()),
        }
    }
}

type StratumKey = (Option<RiskLevel>, u32);

/// Merges undersized strata into the same-label stratum with the nearest
/// `end_quarter` (earlier quarter on ties).
fn merge_small(mut strata: BTreeMap<StratumKey, Vec<usize>>, warnings: &mut Vec<String>) -> Vec<Vec<usize>> {
    loop {
        let small = strata
            .iter()
            .filter(|(_, v)| v.len() < MIN_STRATUM)
            .map(|(k, _)| *k)
            .find(|k| strata.keys().any(|o| o.0 == k.0 && o != k));
        let Some(key) = small else { break };
        let target = *strata
            .keys()
            .filter(|o| o.0 == key.0 && **o != key)
            .min_by_key(|o| (o.1.abs_diff(key.1), o.1))
            .expect("a same-label stratum exists");
        let moved = strata.remove(&key).expect("key present");
        warnings.push(format!(
            "stratum (label {}, end_quarter {}) has {} record(s); merged into end_quarter {}",
            key.0.map_or("none", RiskLevel::name),
            key.1,
            moved.len(),
            target.1
        ));
        strata.get_mut(&target).expect("target present").extend(moved);
    }
    strata.into_values().collect()
}

/// Largest-remainder rounding of `total · ratios` to integers summing to `total`.
fn apportion(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - out.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        out[k] += 1;
    }
    out
}

/// Integer table with row sums `sizes`, column sums `targets`, and each
/// entry the floor or ceiling of `size · ratio`. Solved as a bipartite flow
/// on the fractional parts.
fn round_table(sizes: &[usize], ratios: &[f64; 3], targets: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let exact: Vec<[f64; 3]> = sizes
        .iter()
        .map(|&n| [ratios[0] * n as f64, ratios[1] * n as f64, ratios[2] * n as f64])
        .collect();
    let mut table: Vec<[usize; 3]> = exact.iter().map(|e| e.map(|x| (x + 1e-9).floor() as usize)).collect();
    let mut row_need: Vec<usize> = sizes.iter().zip(&table).map(|(&n, t)| n - t.iter().sum::<usize>()).collect();
    let mut col_need = [0usize; 3];
    for k in 0..3 {
        let have: usize = table.iter().map(|t| t[k]).sum();
        col_need[k] = targets[k].checked_sub(have).ok_or_else(|| Error::State("split rounding overshoot".into()))?;
    }
    let eligible = |s: usize, k: usize| exact[s][k] - table_floor(exact[s][k]) > 1e-9;
    let mut bumped = vec![[false; 3]; sizes.len()];

    // Augmenting paths: a unit from row `s` to column `k`, possibly moving
    // existing bumps along alternating edges.
    fn augment(
        s: usize,
        seen: &mut [bool],
        bumped: &mut [[bool; 3]],
        col_need: &mut [usize; 3],
        eligible: &dyn Fn(usize, usize) -> bool,
    ) -> bool {
        if seen[s] {
            return false;
        }
        seen[s] = true;
        for k in 0..3 {
            if !eligible(s, k) || bumped[s][k] {
                continue;
            }
            if col_need[k] > 0 {
                col_need[k] -= 1;
                bumped[s][k] = true;
                return true;
            }
            for other in 0..bumped.len() {
                if other != s && bumped[other][k] {
                    bumped[other][k] = false;
                    bumped[s][k] = true;
                    if augment(other, seen, bumped, col_need, eligible) {
                        return true;
                    }
                    bumped[s][k] = false;
                    bumped[other][k] = true;
                }
            }
        }
        false
    }

    for s in 0..sizes.len() {
        while row_need[s] > 0 {
            let mut seen = vec![false; sizes.len()];
            if !augment(s, &mut seen, &mut bumped, &mut col_need, &eligible) {
                return Err(Error::State("no consistent split rounding".into()));
            }
            row_need[s] -= 1;
        }
    }
    for (row, b) in table.iter_mut().zip(&bumped) {
        for k in 0..3 {
            row[k] += usize::from(b[k]);
        }
    }
    Ok(table)
}

fn table_floor(x: f64) -> f64 {
    (x + 1e-9).floor()
}

/// Seeded stratified split. Input order does not matter: strata are
/// sorted by id before shuffling.
pub fn split_dataset(records: &[EnterpriseRecord], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut split = DatasetSplit::default();
    let mut by_key: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_key.entry((r.label, r.end_quarter)).or_default().push(i);
    }
    let mut strata = merge_small(by_key, &mut split.warnings);
    for w in &split.warnings {
        log::warn!("{w}");
    }
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let table = round_table(&sizes, &ratios, apportion(records.len(), &ratios))?;

    let mut rng = stream(seed, Purpose::Split, 0);
    for (members, counts) in strata.iter_mut().zip(&table) {
        members.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
        members.shuffle(&mut rng);
        let (train, rest) = members.split_at(counts[0]);
        let (validation, test) = rest.split_at(counts[1]);
        split.train.extend(train.iter().map(|&i| records[i].clone()));
        split.validation.extend(validation.iter().map(|&i| records[i].clone()));
        split.test.extend(test.iter().map(|&i| records[i].clone()));
    }
    Ok(split)
}
