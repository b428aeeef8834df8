//! BERTScore-recall coverage, offline candidate-pool construction, and
//! per-query Set-BSR ordering.
//!
//! Recall of a query `q` by a candidate set `S` is the (weighted) mean over
//! query tokens of the best cosine similarity to any token of any member of
//! `S`. With normalized vectors cosine is a dot product. The empty set has
//! coverage -1 by convention, so the first pick's gain is `bsr + 1`.
//!
//! Both greedy procedures share [`CoverageState`], which tracks the running
//! per-token best similarity so a marginal gain costs `O(|q|)` once the
//! per-token maxima of a candidate are known.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContentItem, Ideology};
use crate::embedding::{EmbeddingStore, TokenEmbeddingSet};
use crate::error::{Error, Result};

/// Marginal gains at or below this are treated as exhausted.
pub const GAIN_EPSILON: f64 = 1e-9;

/// Upper bound on cached per-token similarities during pool construction
/// (`f32` entries). Larger instances recompute similarities on demand.
const SIMILARITY_CACHE_LIMIT: usize = 1 << 25;

/// How query tokens are weighted in the recall mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenWeighting {
    #[default]
    Uniform,
    /// Use provider-supplied token weights (e.g. IDF) when present.
    Idf,
}

fn check_dims(a: &TokenEmbeddingSet, b: &TokenEmbeddingSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Weights over the query's tokens, summing to one.
pub fn query_weights(query: &TokenEmbeddingSet, weighting: TokenWeighting) -> Vec<f64> {
    let n = query.n_tokens();
    if let (TokenWeighting::Idf, Some(w)) = (weighting, query.weights()) {
        let total: f64 = w.iter().map(|&x| x.max(0.0) as f64).sum();
        if total > 0.0 {
            return w.iter().map(|&x| x.max(0.0) as f64 / total).collect();
        }
    }
    vec![1.0 / n as f64; n]
}

/// For each query token, the best similarity to any token of `cand`.
pub fn token_maxima(query: &TokenEmbeddingSet, cand: &TokenEmbeddingSet) -> Vec<f64> {
    query
        .tokens()
        .map(|q| cand.tokens().map(|d| dot(q, d)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// BERTScore recall of `query` by `cand` with uniform token weights.
pub fn bsr(query: &TokenEmbeddingSet, cand: &TokenEmbeddingSet) -> Result<f64> {
    bsr_weighted(query, cand, TokenWeighting::Uniform)
}

pub fn bsr_weighted(query: &TokenEmbeddingSet, cand: &TokenEmbeddingSet, weighting: TokenWeighting) -> Result<f64> {
    check_dims(query, cand)?;
    let w = query_weights(query, weighting);
    Ok(token_maxima(query, cand).iter().zip(&w).map(|(m, w)| m * w).sum())
}

/// Recall of `query` by the union of tokens of every member of `set`.
/// The empty set scores -1.
pub fn set_coverage(query: &TokenEmbeddingSet, set: &[&TokenEmbeddingSet]) -> Result<f64> {
    let mut state = CoverageState::new(query, TokenWeighting::Uniform);
    for member in set {
        check_dims(query, member)?;
        state.add(&token_maxima(query, member));
    }
    Ok(state.value())
}

/// Running best similarity per query token for a growing set.
#[derive(Debug, Clone)]
pub struct CoverageState {
    weights: Vec<f64>,
    best: Vec<f64>,
    members: usize,
}

impl CoverageState {
    pub fn new(query: &TokenEmbeddingSet, weighting: TokenWeighting) -> Self {
        let weights = query_weights(query, weighting);
        let best = vec![-1.0; weights.len()];
        CoverageState {
            weights,
            best,
            members: 0,
        }
    }

    pub fn value(&self) -> f64 {
        if self.members == 0 {
            return -1.0;
        }
        let v: f64 = self.best.iter().zip(&self.weights).map(|(b, w)| b * w).sum();
        v.max(-1.0)
    }

    /// Gain from adding a candidate with the given per-token maxima. Each
    /// term is clamped at zero, so the computed gain is exactly
    /// nonincreasing as the state grows.
    pub fn gain(&self, maxima: &[f64]) -> f64 {
        self.best
            .iter()
            .zip(maxima)
            .zip(&self.weights)
            .map(|((&b, &m), &w)| w * (m - b).max(0.0))
            .sum()
    }

    fn gain_f32(&self, maxima: &[f32]) -> f64 {
        self.best
            .iter()
            .zip(maxima)
            .zip(&self.weights)
            .map(|((&b, &m), &w)| w * (m as f64 - b).max(0.0))
            .sum()
    }

    pub fn add(&mut self, maxima: &[f64]) {
        for (b, &m) in self.best.iter_mut().zip(maxima) {
            *b = b.max(m);
        }
        self.members += 1;
    }

    fn add_f32(&mut self, maxima: &[f32]) {
        for (b, &m) in self.best.iter_mut().zip(maxima) {
            *b = b.max(m as f64);
        }
        self.members += 1;
    }

    pub fn len(&self) -> usize {
        self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub pool_size: usize,
    pub probe_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub weighting: TokenWeighting,
}

impl PoolConfig {
    pub fn new(pool_size: usize, probe_size: usize, seed: u64) -> Self {
        PoolConfig {
            pool_size,
            probe_size,
            seed,
            weighting: TokenWeighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub label: Ideology,
    /// 1-based position in greedy construction order.
    pub rank: usize,
    /// Probe-coverage gain at the time the entry was added.
    pub gain: f64,
}

/// Coverage-maximizing subset of the training set, in greedy order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub entries: Vec<PoolEntry>,
    pub config: PoolConfig,
}

#[derive(Serialize, Deserialize)]
struct PoolHeader {
    build_config: PoolConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn labels(&self) -> HashMap<String, Ideology> {
        self.entries.iter().map(|e| (e.id.clone(), e.label)).collect()
    }

    /// Writes a header line with the build configuration followed by one
    /// line per entry.
    pub fn write_jsonl(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        let header = PoolHeader {
            build_config: self.config,
            config_hash: config_hash.map(str::to_string),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Reads a pool file written by [`CandidatePool::write_jsonl`]. Returns
    /// the pool and the config hash recorded in its header, if any.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<(Self, Option<String>)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header: PoolHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("reading pool file", e))?;
                serde_json::from_str(&line).map_err(|e| parse_err(1, format!("bad header: {e}")))?
            }
            None => return Err(parse_err(1, "empty pool file".into())),
        };
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io("reading pool file", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: PoolEntry = serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
            if !seen.insert(entry.id.clone()) {
                return Err(parse_err(idx + 1, format!("duplicate pool id {:?}", entry.id)));
            }
            entries.push(entry);
        }
        Ok((
            CandidatePool {
                entries,
                config: header.build_config,
            },
            header.config_hash,
        ))
    }
}

/// Heap key: larger gain first, then lower candidate index.
#[derive(Debug, Clone, Copy)]
struct Bound {
    gain: f64,
    idx: usize,
    evaluated_at: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Bound {}
impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Per-probe token maxima for one candidate, concatenated over probes and
/// rounded to `f32`. Rounding happens on both the cached and on-demand
/// paths so results never depend on which one ran.
fn candidate_profile(cand: &TokenEmbeddingSet, probes: &[&TokenEmbeddingSet], total_tokens: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(total_tokens);
    for p in probes {
        out.extend(token_maxima(p, cand).into_iter().map(|m| m as f32));
    }
    out
}

struct ProbeCoverage {
    states: Vec<CoverageState>,
    offsets: Vec<usize>,
}

impl ProbeCoverage {
    fn gain(&self, profile: &[f32]) -> f64 {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| s.gain_f32(&profile[self.offsets[i]..self.offsets[i + 1]]))
            .sum()
    }

    fn add(&mut self, profile: &[f32]) {
        for (i, s) in self.states.iter_mut().enumerate() {
            s.add_f32(&profile[self.offsets[i]..self.offsets[i + 1]]);
        }
    }

    fn value(&self) -> f64 {
        self.states.iter().map(CoverageState::value).sum()
    }
}

/// Deterministic probe sample: sorted indices of a seeded draw without
/// replacement.
pub fn sample_probe_indices(n: usize, probe_size: usize, seed: u64) -> Vec<usize> {
    let m = probe_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// Builds the candidate pool by greedy facility-location coverage of a
/// seeded probe sample of the training set.
///
/// Each step adds the training item with the largest total gain in probe
/// coverage, ties going to the lower input index. Gains only shrink as the
/// pool grows, so stale gains are upper bounds and a lazy priority queue
/// selects exactly what an exhaustive rescan would.
pub fn build_candidate_pool(train: &[ContentItem], store: &EmbeddingStore, config: &PoolConfig) -> Result<CandidatePool> {
    if config.pool_size == 0 {
        return Err(Error::invalid("pool size must be positive"));
    }
    if config.pool_size > train.len() {
        return Err(Error::invalid(format!(
            "pool size {} exceeds training set size {}",
            config.pool_size,
            train.len()
        )));
    }
    let mut labels = Vec::with_capacity(train.len());
    let mut embeddings = Vec::with_capacity(train.len());
    for item in train {
        labels.push(
            item.label
                .ok_or_else(|| Error::invalid(format!("training item {:?} has no label", item.id)))?,
        );
        embeddings.push(store.get(&item.id)?);
    }
    if let Some(first) = embeddings.first() {
        for e in &embeddings {
            check_dims(first, e)?;
        }
    }

    let probes: Vec<&TokenEmbeddingSet> = sample_probe_indices(train.len(), config.probe_size, config.seed)
        .into_iter()
        .map(|i| embeddings[i])
        .collect();
    let mut offsets = vec![0];
    for p in &probes {
        offsets.push(offsets.last().unwrap() + p.n_tokens());
    }
    let total_tokens = *offsets.last().unwrap();
    let mut coverage = ProbeCoverage {
        states: probes.iter().map(|p| CoverageState::new(p, config.weighting)).collect(),
        offsets,
    };

    let cached: Option<Vec<Vec<f32>>> = (train.len().saturating_mul(total_tokens) <= SIMILARITY_CACHE_LIMIT).then(|| {
        embeddings
            .par_iter()
            .map(|c| candidate_profile(c, &probes, total_tokens))
            .collect()
    });
    let profile = |idx: usize| -> std::borrow::Cow<'_, [f32]> {
        match &cached {
            Some(all) => std::borrow::Cow::Borrowed(&all[idx][..]),
            None => std::borrow::Cow::Owned(candidate_profile(embeddings[idx], &probes, total_tokens)),
        }
    };

    let initial: Vec<f64> = (0..train.len())
        .into_par_iter()
        .map(|i| coverage.gain(&profile(i)))
        .collect();
    let mut heap: BinaryHeap<Bound> = initial
        .into_iter()
        .enumerate()
        .map(|(idx, gain)| Bound {
            gain,
            idx,
            evaluated_at: 0,
        })
        .collect();

    let mut entries = Vec::with_capacity(config.pool_size);
    while entries.len() < config.pool_size {
        let step = entries.len();
        let top = heap.pop().expect("pool size never exceeds training set size");
        // A zero bound is exact: gains are never negative.
        if top.evaluated_at == step || top.gain == 0.0 {
            let prof = profile(top.idx);
            coverage.add(&prof);
            entries.push(PoolEntry {
                id: train[top.idx].id.clone(),
                label: labels[top.idx],
                rank: step + 1,
                gain: top.gain,
            });
        } else {
            let gain = coverage.gain(&profile(top.idx));
            heap.push(Bound {
                gain,
                idx: top.idx,
                evaluated_at: step,
            });
        }
    }
    log::debug!(
        "built candidate pool of {} from {} items with {} probes (coverage {:.4})",
        entries.len(),
        train.len(),
        probes.len(),
        coverage.value()
    );
    Ok(CandidatePool {
        entries,
        config: *config,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    /// Greedy marginal-gain order of set coverage against the query.
    #[default]
    SetBsrGreedy,
    /// Each candidate scored on its own by BSR.
    IndependentBsr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    /// Index of the entry in the candidate pool.
    pub pool_index: usize,
    pub marginal_gain: f64,
    pub cumulative_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOrdering {
    pub query_id: String,
    pub ranked: Vec<RankedEntry>,
}

impl QueryOrdering {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|r| r.id.as_str())
    }
}

/// Ranks every pool entry for one query. Uniform token weights.
pub fn order_for_query(
    query: &TokenEmbeddingSet,
    pool: &CandidatePool,
    store: &EmbeddingStore,
    mode: OrderingMode,
) -> Result<QueryOrdering> {
    order_for_query_with(query, pool, store, mode, TokenWeighting::Uniform)
}

/// Ranks every pool entry for one query.
///
/// In greedy mode entries are taken by largest marginal gain in set
/// coverage; once the best gain drops to [`GAIN_EPSILON`] or below, the
/// rest follow in descending independent BSR. Ties always go to the lower
/// pool index. Marginal gain and cumulative coverage are reported against
/// the prefix in both modes.
pub fn order_for_query_with(
    query: &TokenEmbeddingSet,
    pool: &CandidatePool,
    store: &EmbeddingStore,
    mode: OrderingMode,
    weighting: TokenWeighting,
) -> Result<QueryOrdering> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot order an empty candidate pool"));
    }
    let mut maxima = Vec::with_capacity(pool.len());
    for entry in &pool.entries {
        let cand = store.get(&entry.id)?;
        check_dims(query, cand)?;
        maxima.push(token_maxima(query, cand));
    }
    let mut state = CoverageState::new(query, weighting);
    let independent: Vec<f64> = maxima.iter().map(|m| m.iter().zip(&state.weights).map(|(a, w)| a * w).sum()).collect();
    let by_independent = |a: &usize, b: &usize| independent[*b].total_cmp(&independent[*a]).then(a.cmp(b));

    let mut order = Vec::with_capacity(pool.len());
    match mode {
        OrderingMode::IndependentBsr => {
            order.extend(0..pool.len());
            order.sort_by(by_independent);
        }
        OrderingMode::SetBsrGreedy => {
            let mut taken = vec![false; pool.len()];
            let mut active: Vec<usize> = (0..pool.len()).collect();
            let mut probe = state.clone();
            loop {
                let mut best: Option<(usize, f64)> = None;
                let mut still_active = Vec::with_capacity(active.len());
                for &i in &active {
                    let g = probe.gain(&maxima[i]);
                    if g > GAIN_EPSILON {
                        still_active.push(i);
                        if best.is_none_or(|(_, bg)| g > bg) {
                            best = Some((i, g));
                        }
                    }
                }
                let Some((pick, _)) = best else { break };
                probe.add(&maxima[pick]);
                taken[pick] = true;
                order.push(pick);
                still_active.retain(|&i| i != pick);
                active = still_active;
            }
            let mut rest: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
            rest.sort_by(by_independent);
            order.extend(rest);
        }
    }

    let ranked = order
        .into_iter()
        .map(|i| {
            let marginal_gain = state.gain(&maxima[i]);
            state.add(&maxima[i]);
            RankedEntry {
                id: pool.entries[i].id.clone(),
                pool_index: i,
                marginal_gain,
                cumulative_coverage: state.value(),
            }
        })
        .collect();
    Ok(QueryOrdering {
        query_id: query.item_id().to_string(),
        ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn set(id: &str, dim: usize, axes: &[usize]) -> TokenEmbeddingSet {
        let tokens = axes.iter().map(|&a| basis(dim, a)).collect();
        TokenEmbeddingSet::new(id, dim, tokens, basis(dim, 0)).unwrap()
    }

    fn store_of(sets: &[TokenEmbeddingSet]) -> EmbeddingStore {
        let mut store = EmbeddingStore::new();
        for s in sets {
            store.insert(s.clone()).unwrap();
        }
        store
    }

    fn pool_of(ids: &[&str]) -> CandidatePool {
        CandidatePool {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| PoolEntry {
                    id: id.to_string(),
                    label: Ideology::Neutral,
                    rank: i + 1,
                    gain: 0.0,
                })
                .collect(),
            config: PoolConfig::new(ids.len(), 0, 0),
        }
    }

    /// Max-then-mean double loop, written independently of the library path.
    fn naive_bsr(q: &TokenEmbeddingSet, c: &[&TokenEmbeddingSet]) -> f64 {
        if c.is_empty() {
            return -1.0;
        }
        let mut total = 0.0;
        for i in 0..q.n_tokens() {
            let mut best = f64::NEG_INFINITY;
            for s in c {
                for j in 0..s.n_tokens() {
                    let mut d = 0.0;
                    for k in 0..q.dim() {
                        d += q.token(i)[k] as f64 * s.token(j)[k] as f64;
                    }
                    best = best.max(d);
                }
            }
            total += best;
        }
        total / q.n_tokens() as f64
    }

    #[test]
    fn bsr_examples() {
        let x = set("x", 4, &[0, 1, 2]);
        assert!((bsr(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(bsr(&set("q", 4, &[0]), &set("c", 4, &[1])).unwrap(), 0.0);
        let q = set("q", 4, &[0, 1]);
        let oracle = naive_bsr(&q, &[&set("c", 4, &[0])]);
        assert_eq!(oracle, 0.5);
        assert!((bsr(&q, &set("c", 4, &[0])).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn bsr_rejects_dim_mismatch() {
        assert!(matches!(
            bsr(&set("a", 3, &[0]), &set("b", 4, &[0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn set_coverage_examples() {
        let q = set("q", 4, &[0, 1]);
        let e1 = set("a", 4, &[0]);
        let e2 = set("b", 4, &[1]);
        assert_eq!(set_coverage(&q, &[]).unwrap(), -1.0);
        assert!((set_coverage(&q, &[&q]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(naive_bsr(&q, &[&e1, &e2]), 1.0);
        assert!((set_coverage(&q, &[&e1, &e2]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(naive_bsr(&q, &[&e1, &e1]), 0.5);
        assert!((set_coverage(&q, &[&e1, &e1]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(set_coverage(&q, &[&e1]).unwrap(), bsr(&q, &e1).unwrap());
    }

    #[test]
    fn idf_weighting_reweights_tokens() {
        let q = TokenEmbeddingSet::with_weights("q", 2, vec![basis(2, 0), basis(2, 1)], basis(2, 0), Some(vec![3.0, 1.0]))
            .unwrap();
        let c = set("c", 2, &[0]);
        assert!((bsr_weighted(&q, &c, TokenWeighting::Idf).unwrap() - 0.75).abs() < 1e-12);
        assert!((bsr_weighted(&q, &c, TokenWeighting::Uniform).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singleton_pool_gain_is_bsr_plus_one() {
        let q = set("q", 4, &[0, 1]);
        let a = set("a", 4, &[0]);
        let store = store_of(std::slice::from_ref(&a));
        let ord = order_for_query(&q, &pool_of(&["a"]), &store, OrderingMode::SetBsrGreedy).unwrap();
        assert_eq!(ord.ranked.len(), 1);
        assert!((ord.ranked[0].marginal_gain - (bsr(&q, &a).unwrap() + 1.0)).abs() < 1e-12);
        assert!((ord.ranked[0].cumulative_coverage - 0.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_order_breaks_symmetry_by_index() {
        // A={e1}, B={e2}, C={e1}: A and B tie on the first pick, A wins by
        // index; B then covers e2; C adds nothing.
        let q = set("q", 4, &[0, 1]);
        let sets = [set("A", 4, &[0]), set("B", 4, &[1]), set("C", 4, &[0])];
        let store = store_of(&sets);
        let ord = order_for_query(&q, &pool_of(&["A", "B", "C"]), &store, OrderingMode::SetBsrGreedy).unwrap();
        assert_eq!(ord.ids().collect::<Vec<_>>(), ["A", "B", "C"]);
        assert_eq!(ord.ranked[2].marginal_gain, 0.0);
        assert!((ord.ranked[1].cumulative_coverage - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_mode_keeps_input_order_on_ties() {
        let q = set("q", 4, &[0]);
        let sets = [set("A", 4, &[1]), set("B", 4, &[2]), set("C", 4, &[0]), set("D", 4, &[3])];
        let store = store_of(&sets);
        let ord = order_for_query(&q, &pool_of(&["A", "B", "C", "D"]), &store, OrderingMode::IndependentBsr).unwrap();
        assert_eq!(ord.ids().collect::<Vec<_>>(), ["C", "A", "B", "D"]);
    }

    #[test]
    fn empty_pool_errors() {
        let q = set("q", 4, &[0]);
        let pool = CandidatePool {
            entries: vec![],
            config: PoolConfig::new(1, 1, 0),
        };
        assert!(order_for_query(&q, &pool, &EmbeddingStore::new(), OrderingMode::SetBsrGreedy).is_err());
    }

    fn labeled(ids: &[&str]) -> Vec<ContentItem> {
        ids.iter()
            .map(|id| ContentItem::new(*id, "t").with_label(Ideology::Neutral))
            .collect()
    }

    #[test]
    fn pool_with_n_equal_train_holds_everything() {
        let sets: Vec<_> = (0..5).map(|i| set(&format!("i{i}"), 6, &[i, (i + 1) % 6])).collect();
        let store = store_of(&sets);
        let train = labeled(&["i0", "i1", "i2", "i3", "i4"]);
        let pool = build_candidate_pool(&train, &store, &PoolConfig::new(5, 100, 1)).unwrap();
        let mut ids: Vec<_> = pool.ids().collect();
        ids.sort();
        assert_eq!(ids, ["i0", "i1", "i2", "i3", "i4"]);
        assert_eq!(pool.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
    }

    /// Greedy by full recomputation of the probe objective at every step.
    fn naive_greedy(sets: &[TokenEmbeddingSet], probes: &[usize], n: usize) -> Vec<usize> {
        let mut chosen: Vec<usize> = vec![];
        while chosen.len() < n {
            let mut best: Option<(usize, f64)> = None;
            for c in (0..sets.len()).filter(|c| !chosen.contains(c)) {
                let mut with: Vec<&TokenEmbeddingSet> = chosen.iter().map(|&i| &sets[i]).collect();
                with.push(&sets[c]);
                let score: f64 = probes.iter().map(|&p| naive_bsr(&sets[p], &with)).sum();
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((c, score));
                }
            }
            chosen.push(best.unwrap().0);
        }
        chosen
    }

    #[test]
    fn pool_picks_probe_copies_first() {
        // Items 0..3 lie on distinct axes; items 3..8 repeat axes 0,1,2,0,1.
        // With every item a probe, the axis-0 and axis-1 items each cover
        // three probes and axis 2 covers two, so the trace is
        // item 0 (tie with 1,3,4,6,7 broken by index), then 1, then 2.
        let axes = [0, 1, 2, 0, 1, 2, 0, 1];
        let sets: Vec<_> = axes.iter().enumerate().map(|(i, &a)| set(&format!("i{i}"), 4, &[a])).collect();
        let store = store_of(&sets);
        let ids: Vec<String> = (0..8).map(|i| format!("i{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let pool = build_candidate_pool(&labeled(&id_refs), &store, &PoolConfig::new(3, 100, 7)).unwrap();
        let oracle = naive_greedy(&sets, &(0..8).collect::<Vec<_>>(), 3);
        assert_eq!(oracle, [0, 1, 2]);
        assert_eq!(pool.ids().collect::<Vec<_>>(), ["i0", "i1", "i2"]);
    }

    #[test]
    fn pool_rejects_bad_sizes_and_missing_embeddings() {
        let sets = [set("a", 4, &[0])];
        let store = store_of(&sets);
        let train = labeled(&["a"]);
        assert!(build_candidate_pool(&train, &store, &PoolConfig::new(0, 10, 0)).is_err());
        assert!(build_candidate_pool(&train, &store, &PoolConfig::new(2, 10, 0)).is_err());
        let train = labeled(&["a", "b"]);
        assert!(matches!(
            build_candidate_pool(&train, &store, &PoolConfig::new(1, 10, 0)),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn pool_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let pool = pool_of(&["a", "b"]);
        pool.write_jsonl(&path, Some("abc")).unwrap();
        let (back, hash) = CandidatePool::read_jsonl(&path).unwrap();
        assert_eq!(back, pool);
        assert_eq!(hash.as_deref(), Some("abc"));
    }

    fn arb_set(id: &'static str, dim: usize, max_tokens: usize) -> impl Strategy<Value = TokenEmbeddingSet> {
        proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, dim), 1..=max_tokens).prop_filter_map(
            "degenerate",
            move |rows| TokenEmbeddingSet::new(id, dim, rows, vec![1.0; dim]).ok(),
        )
    }

    proptest! {
        #[test]
        fn bsr_matches_naive_and_is_bounded(q in arb_set("q", 6, 5), c in arb_set("c", 6, 5)) {
            let v = bsr(&q, &c).unwrap();
            prop_assert!((v - naive_bsr(&q, &[&c])).abs() < 1e-9);
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&v));
        }

        #[test]
        fn bsr_is_scale_stable(q in arb_set("q", 5, 4), c in arb_set("c", 5, 4), scale in 0.01f32..100.0) {
            let rows: Vec<Vec<f32>> = c.tokens().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let scaled = TokenEmbeddingSet::new("c", 5, rows, vec![1.0; 5]).unwrap();
            prop_assert!((bsr(&q, &c).unwrap() - bsr(&q, &scaled).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn greedy_ordering_matches_full_recompute(
            q in arb_set("q", 5, 4),
            cands in proptest::collection::vec(arb_set("c", 5, 3), 1..7),
        ) {
            let sets: Vec<_> = cands.into_iter().enumerate()
                .map(|(i, s)| TokenEmbeddingSet::new(format!("c{i}"), 5, s.tokens().map(<[f32]>::to_vec).collect(), vec![1.0; 5]).unwrap())
                .collect();
            let ids: Vec<String> = sets.iter().map(|s| s.item_id().to_string()).collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let store = store_of(&sets);
            let ord = order_for_query(&q, &pool_of(&id_refs), &store, OrderingMode::SetBsrGreedy).unwrap();
            prop_assert_eq!(ord.ranked.len(), sets.len());
            let mut prefix: Vec<&TokenEmbeddingSet> = vec![];
            let mut prev = -1.0;
            for r in &ord.ranked {
                prefix.push(store.get(&r.id).unwrap());
                let full = naive_bsr(&q, &prefix);
                prop_assert!((full - r.cumulative_coverage).abs() < 1e-6);
                prop_assert!(r.cumulative_coverage >= prev);
                prev = r.cumulative_coverage;
            }
        }
    }
}
