//! Seeded three-class corpus with token embeddings, for offline runs.
//!
//! Every class owns a small vocabulary of prototype vectors and all classes
//! share a common one. An item's tokens mix both, so token coverage carries
//! label signal without determining it.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ContentItem, Ideology};
use crate::embedding::{EmbeddingStore, TokenEmbeddingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Chance that a token comes from the item's class vocabulary.
    pub class_token_rate: f64,
    /// Standard deviation of the per-token Gaussian jitter.
    pub noise: f64,
    /// Chance that an item's gold label is replaced by a random other class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_train: 300,
            n_test: 150,
            dim: 16,
            class_vocab: 6,
            shared_vocab: 12,
            min_tokens: 3,
            max_tokens: 6,
            class_token_rate: 0.5,
            noise: 0.15,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<ContentItem>,
    pub test: Vec<ContentItem>,
    pub store: EmbeddingStore,
}

const OUTLETS: [[&str; 2]; 3] = [["Left Ledger", "Progress Daily"], ["Wire Desk", "Plain Report"], ["Right Review", "Heritage Herald"]];

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

impl SyntheticCorpus {
    pub fn generate(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = Normal::new(0.0f32, 1.0).unwrap();
        let jitter = Normal::new(0.0f32, cfg.noise as f32).unwrap();
        let proto = |rng: &mut ChaCha8Rng| unit((0..cfg.dim).map(|_| std.sample(rng)).collect());
        let class_protos: Vec<Vec<Vec<f32>>> = (0..3)
            .map(|_| (0..cfg.class_vocab).map(|_| proto(&mut rng)).collect())
            .collect();
        let shared_protos: Vec<Vec<f32>> = (0..cfg.shared_vocab).map(|_| proto(&mut rng)).collect();

        let mut store = EmbeddingStore::new();
        let mut make = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<ContentItem> {
            (0..n)
                .map(|i| {
                    let class = rng.random_range(0..3usize);
                    let n_tok = rng.random_range(cfg.min_tokens..=cfg.max_tokens.max(cfg.min_tokens));
                    let mut words = Vec::with_capacity(n_tok);
                    let mut tokens = Vec::with_capacity(n_tok);
                    for _ in 0..n_tok {
                        let (word, base) = if cfg.class_vocab > 0 && rng.random_bool(cfg.class_token_rate) {
                            let j = rng.random_range(0..cfg.class_vocab);
                            (format!("k{class}{j:02}"), &class_protos[class][j])
                        } else {
                            let j = rng.random_range(0..cfg.shared_vocab.max(1));
                            (format!("s{j:02}"), &shared_protos[j % shared_protos.len().max(1)])
                        };
                        words.push(word);
                        tokens.push(base.iter().map(|x| x + jitter.sample(rng)).collect::<Vec<f32>>());
                    }
                    let mut sentence = vec![0f32; cfg.dim];
                    for t in &tokens {
                        for (s, x) in sentence.iter_mut().zip(t) {
                            *s += x;
                        }
                    }
                    let mut label = class;
                    if cfg.label_noise > 0.0 && rng.random_bool(cfg.label_noise) {
                        label = (class + rng.random_range(1..3usize)) % 3;
                    }
                    let id = format!("{prefix}-{i:05}");
                    let outlet = OUTLETS[class][rng.random_range(0..2usize)];
                    store
                        .insert(TokenEmbeddingSet::new(id.clone(), cfg.dim, tokens, sentence).expect("generated rows are nonzero"))
                        .expect("single dimension");
                    ContentItem::new(id, words.join(" "))
                        .with_source(outlet)
                        .with_description(format!("Synthetic item {i} from the {prefix} split."))
                        .with_label(Ideology::from_index(label).unwrap())
                })
                .collect()
        };
        let train = make("train", cfg.n_train, &mut rng);
        let test = make("test", cfg.n_test, &mut rng);
        SyntheticCorpus { train, test, store }
    }

    /// Writes every item's embedding once per fields hash, so the file
    /// serves any field configuration.
    pub fn write_embeddings(&self, path: impl AsRef<Path>, fields_hashes: &[String]) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = std::io::BufWriter::new(file);
        for item in self.train.iter().chain(&self.test) {
            let set = self.store.get(&item.id)?;
            for fh in fields_hashes {
                serde_json::to_writer(&mut w, &set.to_record(fh))?;
                w.write_all(b"\n").map_err(|e| Error::io("writing embeddings", e))?;
            }
        }
        w.flush().map_err(|e| Error::io("writing embeddings", e))
    }
}
