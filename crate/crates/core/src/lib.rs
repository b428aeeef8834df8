//! Few-shot demonstration selection for three-way ideology classification.
//!
//! The pipeline embeds a labeled training corpus, distills it into a
//! coverage-maximizing candidate pool, ranks that pool per query by set
//! coverage of the query's tokens, admits demonstrations under a per-class
//! quota, renders prompts, and scores model answers.
//!
//! ```
//! use ideoshot::prelude::*;
//!
//! let corpus = SyntheticCorpus::generate(&SyntheticConfig { n_train: 60, n_test: 5, ..Default::default() });
//! let pool = build_candidate_pool(&corpus.train, &corpus.store, &PoolConfig::new(20, 60, 7)).unwrap();
//! let query = corpus.store.get(&corpus.test[0].id).unwrap();
//! let ordering = order_for_query(query, &pool, &corpus.store, OrderingMode::SetBsrGreedy).unwrap();
//! let (demos, _) = balanced_select(&ordering, &pool.labels(), 3).unwrap();
//! assert_eq!(demos.len(), 3);
//! ```

pub mod cli;
pub mod config;
pub mod corpus;
pub mod coverage;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod llm;
pub mod parallel;
pub mod pipeline;
pub mod prompting;
pub mod selection;
pub mod synthetic;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::config::{RunConfig, SelectionMode};
    pub use crate::corpus::{ContentItem, Ideology, LabelMapping, LabelScheme};
    pub use crate::coverage::{
        bsr, build_candidate_pool, order_for_query, set_coverage, CandidatePool, OrderingMode, PoolConfig,
        QueryOrdering,
    };
    pub use crate::embedding::{EmbeddingStore, TokenEmbeddingSet};
    pub use crate::error::{Error, Result};
    pub use crate::evaluation::{delta, mcnemar, score, EvalReport};
    pub use crate::llm::{classify, classify_batch, parse_label, ChatModel, MockKind, MockLlm, PredictionRecord};
    pub use crate::prompting::{render, FieldConfig};
    pub use crate::selection::{balanced_select, random_select, DemonstrationSet};
    pub use crate::synthetic::{SyntheticConfig, SyntheticCorpus};
}
