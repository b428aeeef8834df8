//! Accuracy reports with bootstrap intervals, confusion deltas, paired
//! significance tests and the sentence-embedding MLP baseline.

mod mcnemar;
mod mlp;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use mcnemar::{mcnemar, mcnemar_counts, stars, Comparison, McNemarMode, McNemarResult};
pub use mlp::{mlp_predict, mlp_train, mlp_train_arrays, MlpGradients, MlpHyper, MlpModel};

use crate::corpus::Ideology;
use crate::error::{Error, Result};
use crate::llm::{ParseStatus, PredictionRecord};

/// What produced a set of predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub dataset: String,
    pub k: usize,
    pub fields: String,
    pub selection: String,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub descriptor: RunDescriptor,
    pub config_hash: String,
    pub n: usize,
    pub accuracy: f64,
    pub ci95: (f64, f64),
    /// Rows are gold labels, columns predictions, both in label order.
    pub confusion: [[u64; 3]; 3],
    pub parse_failure_count: usize,
    /// Digest of the sorted query ids, used to check reports are paired.
    pub ids_digest: String,
}

/// Column a record lands in: its prediction, or for parse failures the
/// class after gold in label order.
pub fn confusion_column(record: &PredictionRecord, gold: Ideology) -> usize {
    match (record.parse_status, record.pred) {
        (ParseStatus::Ok, Some(p)) => p.index(),
        _ => (gold.index() + 1) % 3,
    }
}

fn ids_digest<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let sorted: BTreeSet<&str> = ids.collect();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn resample_seed(seed: u64, r: usize) -> u64 {
    // splitmix64 step so neighbouring resamples get unrelated streams.
    let mut z = seed.wrapping_add((r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Percentile bootstrap interval for the mean of 0/1 outcomes. Each
/// resample has its own derived seed, so the result does not depend on
/// thread scheduling.
pub fn bootstrap_ci(correct: &[bool], cfg: &BootstrapConfig) -> (f64, f64) {
    let n = correct.len();
    if n == 0 || cfg.resamples == 0 {
        return (0.0, 1.0);
    }
    let mut means: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(resample_seed(cfg.seed, r));
            let hits = (0..n).filter(|_| correct[rng.random_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let r = means.len();
    let lo = means[((0.025 * r as f64).floor() as usize).min(r - 1)];
    let hi = means[((0.975 * r as f64).ceil() as usize).clamp(1, r) - 1];
    (lo, hi)
}

/// Scores a set of predictions. Records whose answer did not parse count
/// as wrong and are tallied in `parse_failure_count`.
pub fn score(records: &[PredictionRecord], descriptor: RunDescriptor, boot: &BootstrapConfig) -> Result<EvalReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("no prediction records to score"))?;
    if let Some(other) = records.iter().find(|r| r.config_hash != first.config_hash) {
        return Err(Error::MixedConfig(first.config_hash.clone(), other.config_hash.clone()));
    }
    let mut seen = std::collections::HashSet::new();
    let mut confusion = [[0u64; 3]; 3];
    let mut correct = Vec::with_capacity(records.len());
    let mut failures = 0;
    for r in records {
        if !seen.insert(r.query_id.as_str()) {
            return Err(Error::invalid(format!("duplicate prediction for {:?}", r.query_id)));
        }
        let gold = r
            .gold
            .ok_or_else(|| Error::invalid(format!("record {:?} has no gold label", r.query_id)))?;
        if r.parse_status != ParseStatus::Ok || r.pred.is_none() {
            failures += 1;
        }
        let col = confusion_column(r, gold);
        confusion[gold.index()][col] += 1;
        correct.push(col == gold.index());
    }
    let n = records.len();
    let hits = correct.iter().filter(|&&c| c).count();
    let accuracy = hits as f64 / n as f64;
    let (lo, hi) = bootstrap_ci(&correct, boot);
    Ok(EvalReport {
        descriptor,
        config_hash: first.config_hash.clone(),
        n,
        accuracy,
        ci95: (lo.min(accuracy), hi.max(accuracy)),
        confusion,
        parse_failure_count: failures,
        ids_digest: ids_digest(records.iter().map(|r| r.query_id.as_str())),
    })
}

/// Percentage-point change per (gold, pred) cell between two reports on the
/// same test set, each row normalized by its gold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix(pub [[f64; 3]; 3]);

impl DeltaMatrix {
    pub fn row_sums(&self) -> [f64; 3] {
        self.0.map(|row| row.iter().sum())
    }
}

fn row_percent(confusion: &[[u64; 3]; 3]) -> [[f64; 3]; 3] {
    confusion.map(|row| {
        let total: u64 = row.iter().sum();
        if total == 0 {
            [0.0; 3]
        } else {
            row.map(|c| 100.0 * c as f64 / total as f64)
        }
    })
}

pub fn delta(a: &EvalReport, b: &EvalReport) -> Result<DeltaMatrix> {
    if a.ids_digest != b.ids_digest || a.n != b.n {
        return Err(Error::IdMismatch(format!(
            "reports cover different test sets ({} items, {} vs {} items, {})",
            a.n, a.ids_digest, b.n, b.ids_digest
        )));
    }
    let gold_a = a.confusion.map(|r| r.iter().sum::<u64>());
    let gold_b = b.confusion.map(|r| r.iter().sum::<u64>());
    if gold_a != gold_b {
        return Err(Error::IdMismatch(format!("gold marginals differ: {gold_a:?} vs {gold_b:?}")));
    }
    let (pa, pb) = (row_percent(&a.confusion), row_percent(&b.confusion));
    let mut out = [[0.0; 3]; 3];
    for g in 0..3 {
        for p in 0..3 {
            out[g][p] = pb[g][p] - pa[g][p];
        }
    }
    Ok(DeltaMatrix(out))
}

/// Pairs two prediction sets by query id; errors unless the id sets match.
pub(crate) fn pair_by_id<'a>(
    a: &'a [PredictionRecord],
    b: &'a [PredictionRecord],
) -> Result<Vec<(&'a PredictionRecord, &'a PredictionRecord)>> {
    let index: HashMap<&str, &PredictionRecord> = b.iter().map(|r| (r.query_id.as_str(), r)).collect();
    if index.len() != b.len() || a.len() != b.len() {
        return Err(Error::IdMismatch(format!("{} vs {} records", a.len(), b.len())));
    }
    a.iter()
        .map(|ra| {
            index
                .get(ra.query_id.as_str())
                .map(|rb| (ra, *rb))
                .ok_or_else(|| Error::IdMismatch(format!("{:?} missing from second set", ra.query_id)))
        })
        .collect()
}
