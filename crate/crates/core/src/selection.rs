//! Label-balanced demonstration selection over a per-query ranking, and the
//! random baseline.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Ideology;
use crate::coverage::{CandidatePool, QueryOrdering};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoMember {
    pub id: String,
    pub label: Ideology,
    /// 1-based rank in the query ordering (or pool rank for random picks).
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub query_id: String,
    /// In admission order.
    pub members: Vec<DemoMember>,
    pub k_requested: usize,
    pub fallback_used: bool,
}

impl DemonstrationSet {
    pub fn empty(query_id: impl Into<String>) -> Self {
        DemonstrationSet {
            query_id: query_id.into(),
            members: Vec::new(),
            k_requested: 0,
            fallback_used: false,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for m in &self.members {
            counts[m.label.index()] += 1;
        }
        counts
    }
}

/// One line of the selection trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub query_id: String,
    pub k: usize,
    pub members: Vec<DemoMember>,
    /// Entries passed over in the quota pass because their class was full.
    pub skipped: Vec<DemoMember>,
    pub fallback_used: bool,
}

/// Per-class cap: the smallest quota that lets three classes fill `k` slots.
pub fn class_quota(k: usize) -> usize {
    k.div_ceil(3)
}

/// Walks the ranking and admits an entry only while its class is below
/// `ceil(k/3)`, stopping at `k` members.
///
/// If the ranking runs out first, one fill pass admits the best-ranked
/// skipped entries regardless of class. The fill is logged and flagged in
/// `fallback_used`.
pub fn balanced_select(
    ordering: &QueryOrdering,
    labels: &HashMap<String, Ideology>,
    k: usize,
) -> Result<(DemonstrationSet, SelectionTrace)> {
    if k > 0 && ordering.ranked.is_empty() {
        return Err(Error::invalid("cannot select demonstrations from an empty ordering"));
    }
    let quota = class_quota(k);
    let mut counts = [0usize; 3];
    let mut members = Vec::with_capacity(k);
    let mut skipped = Vec::new();

    for (pos, entry) in ordering.ranked.iter().enumerate() {
        if members.len() == k {
            break;
        }
        let label = *labels
            .get(&entry.id)
            .ok_or_else(|| Error::invalid(format!("no label for pool entry {:?}", entry.id)))?;
        let member = DemoMember {
            id: entry.id.clone(),
            label,
            rank: pos + 1,
        };
        if counts[label.index()] < quota {
            counts[label.index()] += 1;
            members.push(member);
        } else {
            skipped.push(member);
        }
    }

    let mut fallback_used = false;
    if members.len() < k && !skipped.is_empty() {
        let need = k - members.len();
        members.extend(skipped.iter().take(need).cloned());
        fallback_used = true;
        log::info!(
            "query {:?}: class quota of {quota} left {} of {k} slots empty; filled from skipped entries",
            ordering.query_id,
            need
        );
    }

    let demos = DemonstrationSet {
        query_id: ordering.query_id.clone(),
        members: members.clone(),
        k_requested: k,
        fallback_used,
    };
    let trace = SelectionTrace {
        query_id: ordering.query_id.clone(),
        k,
        members,
        skipped,
        fallback_used,
    };
    Ok((demos, trace))
}

/// Uniform sample of `k` pool entries without replacement, in shuffled order.
pub fn random_select(pool: &CandidatePool, k: usize, seed: u64) -> Result<DemonstrationSet> {
    if k > pool.len() {
        return Err(Error::invalid(format!(
            "cannot draw {k} demonstrations from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let (picked, _) = idx.partial_shuffle(&mut rng, k);
    let members = picked
        .iter()
        .map(|&i| {
            let e = &pool.entries[i];
            DemoMember {
                id: e.id.clone(),
                label: e.label,
                rank: e.rank,
            }
        })
        .collect();
    Ok(DemonstrationSet {
        query_id: String::new(),
        members,
        k_requested: k,
        fallback_used: false,
    })
}
