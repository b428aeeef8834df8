use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingRecord;
use crate::error::{Error, Result};

/// Unnormalized provider output for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEmbedding {
    pub dim: usize,
    pub tokens: Vec<Vec<f32>>,
    pub sentence: Vec<f32>,
    #[serde(default)]
    pub weights: Option<Vec<f32>>,
}

/// Source of token and sentence vectors. Implementations must be
/// deterministic: the same input yields the same vectors. Special and
/// padding tokens are the provider's job to exclude (all-zero rows are also
/// dropped downstream).
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, item_id: &str, fields_hash: &str, text: &str) -> Result<RawEmbedding>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    PrecomputedFile,
    HttpService,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    /// File path for `precomputed_file`, URL for `http_service`.
    pub location: String,
    pub dim: usize,
}

impl EmbeddingProviderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.kind {
            ProviderKind::PrecomputedFile => Box::new(PrecomputedEmbeddings::load(&self.location, self.dim)?),
            ProviderKind::HttpService => Box::new(HttpEmbeddingProvider::new(&self.location, self.dim)),
        })
    }
}

/// Vectors read from a precomputed JSONL file, keyed by `(id, fields_hash)`.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    records: HashMap<(String, String), EmbeddingRecord>,
}

impl PrecomputedEmbeddings {
    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut records = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EmbeddingRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            if record.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: record.dim,
                });
            }
            records.insert((record.id.clone(), record.fields_hash.clone()), record);
        }
        Ok(PrecomputedEmbeddings { dim, records })
    }

    pub fn from_records(dim: usize, records: impl IntoIterator<Item = EmbeddingRecord>) -> Result<Self> {
        let mut map = HashMap::new();
        for r in records {
            if r.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.dim,
                });
            }
            map.insert((r.id.clone(), r.fields_hash.clone()), r);
        }
        Ok(PrecomputedEmbeddings { dim, records: map })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item_id: &str, fields_hash: &str, _text: &str) -> Result<RawEmbedding> {
        let r = self
            .records
            .get(&(item_id.to_string(), fields_hash.to_string()))
            .ok_or_else(|| Error::MissingEmbedding(format!("{item_id} (fields {fields_hash})")))?;
        Ok(RawEmbedding {
            dim: r.dim,
            tokens: r.tokens.clone(),
            sentence: r.sentence.clone(),
            weights: r.weights.clone(),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

/// Embedding service reached by `POST {"text": ...}`; the response body is
/// an embedding record without the `id` field.
pub struct HttpEmbeddingProvider {
    url: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(url: &str, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbeddingProvider {
            url: url.to_string(),
            dim,
            agent,
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item_id: &str, _fields_hash: &str, text: &str) -> Result<RawEmbedding> {
        let resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { text })
            .map_err(|e| Error::ProviderUnreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Error::ProviderUnreachable(format!("HTTP {status} for {item_id:?}")));
        }
        if status >= 400 {
            return Err(Error::invalid(format!("embedding service rejected {item_id:?} with HTTP {status}")));
        }
        resp.into_body()
            .read_json::<RawEmbedding>()
            .map_err(|e| Error::invalid(format!("bad embedding response for {item_id:?}: {e}")))
    }
}
