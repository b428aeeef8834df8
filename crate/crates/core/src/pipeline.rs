//! Select → prompt → classify for a whole test set.

use std::collections::HashMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SelectionMode};
use crate::corpus::{ContentItem, Ideology};
use crate::coverage::{order_for_query_with, CandidatePool};
use crate::embedding::EmbeddingStore;
use crate::error::Result;
use crate::llm::{classify_batch, ChatModel, ClassifyJob, PredictionRecord};
use crate::prompting::render_with;
use crate::selection::{balanced_select, random_select, DemonstrationSet, SelectionTrace};

#[derive(Debug, Clone)]
pub struct Selection {
    pub demos: DemonstrationSet,
    /// Present for balanced selection.
    pub trace: Option<SelectionTrace>,
}

#[derive(Debug, Clone)]
pub struct ClassifyOutput {
    /// Sorted by query id.
    pub predictions: Vec<PredictionRecord>,
    /// Sorted by query id.
    pub selections: Vec<Selection>,
}

/// Seed for one query's random draw; depends only on the run seed and the
/// query id, not on processing order.
pub fn query_seed(seed: u64, query_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Picks demonstrations for every test item.
pub fn select_demonstrations(
    test: &[ContentItem],
    pool: &CandidatePool,
    store: &EmbeddingStore,
    cfg: &RunConfig,
) -> Result<Vec<Selection>> {
    let labels: HashMap<String, Ideology> = pool.labels();
    test.par_iter()
        .map(|item| {
            if cfg.k == 0 {
                return Ok(Selection {
                    demos: DemonstrationSet::empty(item.id.clone()),
                    trace: None,
                });
            }
            match cfg.select {
                SelectionMode::Random => {
                    let mut demos = random_select(pool, cfg.k.min(pool.len()), query_seed(cfg.seed, &item.id))?;
                    demos.query_id = item.id.clone();
                    demos.k_requested = cfg.k;
                    Ok(Selection { demos, trace: None })
                }
                SelectionMode::Balanced => {
                    let query = store.get(&item.id)?;
                    let ordering = order_for_query_with(query, pool, store, cfg.order, cfg.weighting)?;
                    let (demos, trace) = balanced_select(&ordering, &labels, cfg.k)?;
                    Ok(Selection {
                        demos,
                        trace: Some(trace),
                    })
                }
            }
        })
        .collect()
}

/// Runs selection, rendering and classification for the test set.
pub fn classify_test_set(
    train: &[ContentItem],
    test: &[ContentItem],
    pool: &CandidatePool,
    store: &EmbeddingStore,
    model: &dyn ChatModel,
    cfg: &RunConfig,
    config_hash: &str,
) -> Result<ClassifyOutput> {
    let mut selections = select_demonstrations(test, pool, store, cfg)?;
    let demo_items: HashMap<String, ContentItem> = train.iter().map(|i| (i.id.clone(), i.clone())).collect();
    let opts = cfg.render_options();
    let jobs = test
        .iter()
        .zip(&selections)
        .map(|(item, sel)| {
            Ok(ClassifyJob {
                query_id: item.id.clone(),
                gold: item.label,
                prompt: render_with(item, &sel.demos, &demo_items, &cfg.fields, &opts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions = classify_batch(model, &jobs, &cfg.llm, config_hash);
    selections.sort_by(|a, b| a.demos.query_id.cmp(&b.demos.query_id));
    Ok(ClassifyOutput {
        predictions,
        selections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::build_candidate_pool;
    use crate::llm::{MockKind, MockLlm, ParseStatus};
    use crate::synthetic::{SyntheticConfig, SyntheticCorpus};

    fn corpus() -> SyntheticCorpus {
        SyntheticCorpus::generate(&SyntheticConfig {
            n_train: 90,
            n_test: 30,
            ..SyntheticConfig::default()
        })
    }

    #[test]
    fn balanced_run_is_deterministic_and_complete() {
        let c = corpus();
        let cfg = RunConfig {
            k: 3,
            pool_size: 40,
            probe_size: 60,
            ..RunConfig::default()
        };
        let pool = build_candidate_pool(&c.train, &c.store, &cfg.pool_config()).unwrap();
        let model = MockLlm::new(MockKind::EchoMajority);
        let a = classify_test_set(&c.train, &c.test, &pool, &c.store, &model, &cfg, "h").unwrap();
        let b = classify_test_set(&c.train, &c.test, &pool, &c.store, &model, &cfg, "h").unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.predictions.len(), c.test.len());
        assert!(a.predictions.iter().all(|p| p.parse_status == ParseStatus::Ok));
        assert!(a.selections.iter().all(|s| s.demos.len() == 3));
        assert!(a.predictions.windows(2).all(|w| w[0].query_id < w[1].query_id));
    }

    #[test]
    fn random_and_zero_shot() {
        let c = corpus();
        let mut cfg = RunConfig {
            k: 4,
            select: SelectionMode::Random,
            pool_size: 20,
            probe_size: 20,
            ..RunConfig::default()
        };
        let pool = build_candidate_pool(&c.train, &c.store, &cfg.pool_config()).unwrap();
        let sel = select_demonstrations(&c.test, &pool, &c.store, &cfg).unwrap();
        assert!(sel.iter().all(|s| s.demos.len() == 4 && s.trace.is_none()));
        assert_ne!(sel[0].demos.members, sel[1].demos.members);

        cfg.k = 0;
        let sel = select_demonstrations(&c.test, &pool, &c.store, &cfg).unwrap();
        assert!(sel.iter().all(|s| s.demos.is_empty()));
    }
}
