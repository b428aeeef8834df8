//! Token and sentence embeddings for content items.
//!
//! Coverage scoring only ever sees [`TokenEmbeddingSet`]s; where the vectors
//! come from is hidden behind [`EmbeddingProvider`]. Vectors are
//! L2-normalized on construction so providers may return raw outputs.

mod cache;
mod provider;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cache::EmbeddingCache;
pub use provider::{
    EmbeddingProvider, EmbeddingProviderConfig, HttpEmbeddingProvider, PrecomputedEmbeddings, ProviderKind,
    RawEmbedding,
};

use crate::corpus::ContentItem;
use crate::error::{Error, Result};
use crate::parallel::bounded_map;
use crate::prompting::FieldConfig;

/// Rows with a norm below this are treated as padding and dropped.
const PADDING_NORM: f64 = 1e-12;

/// Per-item token vectors plus one sentence vector, all unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSet {
    item_id: String,
    dim: usize,
    /// Row-major `n_tokens x dim`.
    tokens: Vec<f32>,
    sentence: Vec<f32>,
    /// Optional per-token importance weights (e.g. IDF) supplied by the provider.
    weights: Option<Vec<f32>>,
}

fn normalize(v: &mut [f32]) -> f64 {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > PADDING_NORM {
        for x in v.iter_mut() {
            *x = ((*x as f64) / norm) as f32;
        }
    }
    norm
}

impl TokenEmbeddingSet {
    /// Builds a set from raw provider output. Token rows are normalized,
    /// all-zero rows are dropped, and an empty result is an error.
    pub fn new(item_id: impl Into<String>, dim: usize, tokens: Vec<Vec<f32>>, sentence: Vec<f32>) -> Result<Self> {
        Self::with_weights(item_id, dim, tokens, sentence, None)
    }

    pub fn with_weights(
        item_id: impl Into<String>,
        dim: usize,
        tokens: Vec<Vec<f32>>,
        mut sentence: Vec<f32>,
        weights: Option<Vec<f32>>,
    ) -> Result<Self> {
        let item_id = item_id.into();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if let Some(w) = &weights {
            if w.len() != tokens.len() {
                return Err(Error::invalid(format!(
                    "{item_id:?}: {} token weights for {} tokens",
                    w.len(),
                    tokens.len()
                )));
            }
        }
        let mut flat = Vec::with_capacity(tokens.len() * dim);
        let mut kept_weights = Vec::new();
        for (i, mut row) in tokens.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{item_id:?}: non-finite token vector")));
            }
            if normalize(&mut row) > PADDING_NORM {
                flat.extend_from_slice(&row);
                if let Some(w) = &weights {
                    kept_weights.push(w[i]);
                }
            }
        }
        if flat.is_empty() {
            return Err(Error::EmptyTokenization(item_id));
        }
        if sentence.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: sentence.len(),
            });
        }
        if sentence.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{item_id:?}: non-finite sentence vector")));
        }
        normalize(&mut sentence);
        Ok(TokenEmbeddingSet {
            item_id,
            dim,
            tokens: flat,
            sentence,
            weights: weights.map(|_| kept_weights),
        })
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len() / self.dim
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.tokens.chunks_exact(self.dim)
    }

    pub fn sentence(&self) -> &[f32] {
        &self.sentence
    }

    pub fn weights(&self) -> Option<&[f32]> {
        self.weights.as_deref()
    }

    pub fn to_record(&self, fields_hash: &str) -> EmbeddingRecord {
        EmbeddingRecord {
            id: self.item_id.clone(),
            fields_hash: fields_hash.to_string(),
            dim: self.dim,
            tokens: self.tokens().map(<[f32]>::to_vec).collect(),
            sentence: self.sentence.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// On-disk form shared by precomputed files and cache entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub fields_hash: String,
    pub dim: usize,
    pub tokens: Vec<Vec<f32>>,
    pub sentence: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f32>>,
}

impl EmbeddingRecord {
    pub fn into_set(self) -> Result<TokenEmbeddingSet> {
        TokenEmbeddingSet::with_weights(self.id, self.dim, self.tokens, self.sentence, self.weights)
    }
}

/// Embeddings for a corpus, keyed by item id, with a single shared dimension.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: Option<usize>,
    sets: HashMap<String, TokenEmbeddingSet>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, set: TokenEmbeddingSet) -> Result<()> {
        match self.dim {
            Some(d) if d != set.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: set.dim(),
                })
            }
            _ => self.dim = Some(set.dim()),
        }
        self.sets.insert(set.item_id().to_string(), set);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&TokenEmbeddingSet> {
        self.sets.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sets.contains_key(id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// All sets, ordered by item id.
    pub fn sorted(&self) -> Vec<&TokenEmbeddingSet> {
        let mut v: Vec<_> = self.sets.values().collect();
        v.sort_by(|a, b| a.item_id().cmp(b.item_id()));
        v
    }

    /// Reads every record of a precomputed JSONL file matching `fields_hash`.
    pub fn load_jsonl(path: impl AsRef<Path>, fields_hash: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut store = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            if record.fields_hash == fields_hash {
                store.insert(record.into_set()?)?;
            }
        }
        Ok(store)
    }
}

/// Embeds one item under a field configuration, consulting the cache first.
pub fn embed_item(
    item: &ContentItem,
    fields: &FieldConfig,
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
) -> Result<TokenEmbeddingSet> {
    let fields_hash = fields.fields_hash();
    if let Some(cache) = cache {
        if let Some(hit) = cache.get(&item.id, &fields_hash) {
            if hit.dim() == provider.dim() {
                return Ok(hit);
            }
        }
    }
    let text = fields.embedding_text(item);
    if text.trim().is_empty() {
        return Err(Error::EmptyTokenization(item.id.clone()));
    }
    let raw = provider.embed(&item.id, &fields_hash, &text)?;
    if raw.dim != provider.dim() {
        return Err(Error::DimensionMismatch {
            expected: provider.dim(),
            actual: raw.dim,
        });
    }
    let set = TokenEmbeddingSet::with_weights(item.id.clone(), raw.dim, raw.tokens, raw.sentence, raw.weights)?;
    if let Some(cache) = cache {
        cache.put(&set, &fields_hash)?;
    }
    Ok(set)
}

/// Embeds many items with bounded fan-out. Transient provider failures are
/// retried up to `max_retries` times with doubling backoff.
pub fn embed_all(
    items: &[ContentItem],
    fields: &FieldConfig,
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    max_in_flight: usize,
    max_retries: u32,
) -> Result<EmbeddingStore> {
    let results = bounded_map(items, max_in_flight, |item| {
        let mut attempt = 0;
        loop {
            match embed_item(item, fields, provider, cache) {
                Err(Error::ProviderUnreachable(msg)) if attempt < max_retries => {
                    log::warn!("embedding {:?} failed ({msg}); retrying", item.id);
                    std::thread::sleep(std::time::Duration::from_millis(200 << attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    });
    let mut store = EmbeddingStore::new();
    for r in results {
        store.insert(r?)?;
    }
    Ok(store)
}
