//! Python bindings for the `ideoshot` crate.
//!
//! Structured results cross the boundary as plain dicts and lists.

use std::collections::HashMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use ideoshot::config::RunConfig;
use ideoshot::corpus::{map_label, ContentItem, Ideology, LabelMapping, LabelScheme};
use ideoshot::coverage::{self, OrderingMode, PoolConfig};
use ideoshot::embedding::TokenEmbeddingSet;
use ideoshot::evaluation::{self, BootstrapConfig, McNemarMode, RunDescriptor};
use ideoshot::llm::{MockKind, MockLlm, ParsedLabel};
use ideoshot::prompting::FieldConfig;
use ideoshot::selection;

create_exception!(ideoshot, IdeoshotError, PyException);

fn err(e: ideoshot::Error) -> PyErr {
    IdeoshotError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| IdeoshotError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn token_set(id: &str, rows: Vec<Vec<f32>>) -> PyResult<TokenEmbeddingSet> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut sentence = vec![0f32; dim];
    for row in &rows {
        for (s, x) in sentence.iter_mut().zip(row) {
            *s += x;
        }
    }
    TokenEmbeddingSet::new(id, dim, rows, sentence).map_err(err)
}

/// Mean best cosine similarity of each query token to the candidate's tokens.
#[pyfunction]
fn bsr(query: Vec<Vec<f32>>, candidate: Vec<Vec<f32>>) -> PyResult<f64> {
    coverage::bsr(&token_set("query", query)?, &token_set("candidate", candidate)?).map_err(err)
}

/// Coverage of the query's tokens by a set of candidates; -1 when empty.
#[pyfunction]
fn set_coverage(query: Vec<Vec<f32>>, candidates: Vec<Vec<Vec<f32>>>) -> PyResult<f64> {
    let q = token_set("query", query)?;
    let sets = candidates
        .into_iter()
        .enumerate()
        .map(|(i, c)| token_set(&format!("c{i}"), c))
        .collect::<PyResult<Vec<_>>>()?;
    let refs: Vec<&TokenEmbeddingSet> = sets.iter().collect();
    coverage::set_coverage(&q, &refs).map_err(err)
}

#[pyfunction]
fn class_quota(k: usize) -> usize {
    selection::class_quota(k)
}

/// Returns `(status, label)` with status one of ok, empty, ambiguous.
#[pyfunction]
fn parse_label(text: &str) -> (&'static str, Option<&'static str>) {
    match ideoshot::llm::parse_label(text) {
        ParsedLabel::Label(l) => ("ok", Some(l.as_word())),
        ParsedLabel::Empty => ("empty", None),
        ParsedLabel::Ambiguous => ("ambiguous", None),
    }
}

#[pyfunction]
#[pyo3(signature = (score, scheme = "direct"))]
fn label_for_score(score: f64, scheme: &str) -> PyResult<&'static str> {
    let scheme: LabelScheme = scheme.parse().map_err(err)?;
    map_label(score, &LabelMapping::for_scheme(scheme)).map(Ideology::as_word).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (fields = "title-source-desc", cot = false))]
fn instruction(fields: &str, cot: bool) -> PyResult<String> {
    let cfg: FieldConfig = fields.parse().map_err(err)?;
    Ok(ideoshot::prompting::instruction_for(&cfg, cot))
}

/// McNemar test from discordant counts: `b` only the first system correct,
/// `c` only the second.
#[pyfunction]
#[pyo3(signature = (b, c, exact = false))]
fn mcnemar(py: Python<'_>, b: u64, c: u64, exact: bool) -> PyResult<Py<PyAny>> {
    let mode = if exact { McNemarMode::Exact } else { McNemarMode::Corrected };
    let r = evaluation::mcnemar_counts(b, c, mode);
    let row = evaluation::Comparison::new("a", "b", &r);
    to_py(py, &serde_json::json!({"b": r.b, "c": r.c, "statistic": r.statistic, "p": r.p, "stars": row.stars}))
}

/// Runs the command-line tool with the given arguments (without the
/// program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> PyResult<()> {
    ideoshot::cli::run(std::iter::once("ideoshot".to_string()).chain(args)).map_err(err)
}

/// Candidate pool built greedily from a corpus's training split.
#[pyclass(module = "ideoshot", frozen)]
struct CandidatePool {
    inner: coverage::CandidatePool,
}

#[pymethods]
impl CandidatePool {
    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_string).collect()
    }

    #[getter]
    fn entries(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.entries)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "CandidatePool(size={}, probe_size={}, seed={})",
            self.inner.len(),
            self.inner.config.probe_size,
            self.inner.config.seed
        )
    }
}

/// Seeded three-class corpus with token embeddings.
#[pyclass(module = "ideoshot", frozen)]
struct SyntheticCorpus {
    inner: ideoshot::synthetic::SyntheticCorpus,
}

impl SyntheticCorpus {
    fn item_map(&self) -> HashMap<String, ContentItem> {
        self.inner.train.iter().map(|i| (i.id.clone(), i.clone())).collect()
    }
}

#[pymethods]
impl SyntheticCorpus {
    #[new]
    #[pyo3(signature = (n_train = 300, n_test = 150, dim = 16, label_noise = 0.0, seed = 0))]
    fn new(n_train: usize, n_test: usize, dim: usize, label_noise: f64, seed: u64) -> PyResult<Self> {
        if dim == 0 || !(0.0..=1.0).contains(&label_noise) {
            return Err(IdeoshotError::new_err("dim must be positive and label_noise in [0, 1]"));
        }
        let cfg = ideoshot::synthetic::SyntheticConfig {
            n_train,
            n_test,
            dim,
            label_noise,
            seed,
            ..Default::default()
        };
        Ok(SyntheticCorpus {
            inner: ideoshot::synthetic::SyntheticCorpus::generate(&cfg),
        })
    }

    #[getter]
    fn train(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.train)
    }

    #[getter]
    fn test(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.test)
    }

    /// Unit-normalized token vectors of one item.
    fn tokens(&self, item_id: &str) -> PyResult<Vec<Vec<f32>>> {
        let set = self.inner.store.get(item_id).map_err(err)?;
        Ok(set.tokens().map(<[f32]>::to_vec).collect())
    }

    #[pyo3(signature = (pool_size = 500, probe_size = 2000, seed = 0))]
    fn build_pool(&self, pool_size: usize, probe_size: usize, seed: u64) -> PyResult<CandidatePool> {
        let cfg = PoolConfig::new(pool_size, probe_size, seed);
        let inner = coverage::build_candidate_pool(&self.inner.train, &self.inner.store, &cfg).map_err(err)?;
        Ok(CandidatePool { inner })
    }

    /// Label-balanced demonstrations for one test item.
    #[pyo3(signature = (pool, query_id, k = 8, order = "set-bsr"))]
    fn select(&self, py: Python<'_>, pool: &CandidatePool, query_id: &str, k: usize, order: &str) -> PyResult<Py<PyAny>> {
        let mode: OrderingMode = ideoshot::config::parse_ordering(order).map_err(err)?;
        let query = self.inner.store.get(query_id).map_err(err)?;
        let ordering = coverage::order_for_query(query, &pool.inner, &self.inner.store, mode).map_err(err)?;
        let (demos, _) = selection::balanced_select(&ordering, &pool.inner.labels(), k).map_err(err)?;
        to_py(py, &demos)
    }

    /// Renders the prompt text for a test item and its selected demonstrations.
    #[pyo3(signature = (pool, query_id, k = 8, fields = "title-source-desc"))]
    fn prompt(&self, pool: &CandidatePool, query_id: &str, k: usize, fields: &str) -> PyResult<String> {
        let fields: FieldConfig = fields.parse().map_err(err)?;
        let item = self
            .inner
            .test
            .iter()
            .find(|i| i.id == query_id)
            .ok_or_else(|| IdeoshotError::new_err(format!("no test item {query_id:?}")))?;
        let query = self.inner.store.get(query_id).map_err(err)?;
        let ordering =
            coverage::order_for_query(query, &pool.inner, &self.inner.store, OrderingMode::SetBsrGreedy).map_err(err)?;
        let (demos, _) = selection::balanced_select(&ordering, &pool.inner.labels(), k).map_err(err)?;
        let prompt = ideoshot::prompting::render(item, &demos, &self.item_map(), &fields, false).map_err(err)?;
        Ok(prompt.to_text())
    }

    /// Classifies the test split with a mock model and returns the report
    /// plus predictions.
    #[pyo3(signature = (k = 8, select = "balanced", mock = "echo_majority", pool_size = 500, probe_size = 2000, seed = 0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        k: usize,
        select: &str,
        mock: &str,
        pool_size: usize,
        probe_size: usize,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let cfg = RunConfig {
            k,
            select: select.parse().map_err(err)?,
            pool_size,
            probe_size,
            seed,
            mock: Some(mock.to_string()),
            ..RunConfig::default()
        };
        cfg.validate().map_err(err)?;
        let kind: MockKind = mock.parse().map_err(err)?;
        let hash = cfg.config_hash();
        let pool = coverage::build_candidate_pool(&self.inner.train, &self.inner.store, &cfg.pool_config()).map_err(err)?;
        let out = ideoshot::pipeline::classify_test_set(
            &self.inner.train,
            &self.inner.test,
            &pool,
            &self.inner.store,
            &MockLlm::new(kind),
            &cfg,
            &hash,
        )
        .map_err(err)?;
        let descriptor = RunDescriptor {
            dataset: "synthetic".into(),
            k,
            fields: cfg.fields.to_string(),
            selection: cfg.select.to_string(),
            model: format!("mock:{mock}"),
        };
        let report = evaluation::score(&out.predictions, descriptor, &BootstrapConfig::default()).map_err(err)?;
        to_py(py, &serde_json::json!({"report": report, "predictions": out.predictions}))
    }

    fn __repr__(&self) -> String {
        format!("SyntheticCorpus(n_train={}, n_test={})", self.inner.train.len(), self.inner.test.len())
    }
}

#[pymodule(name = "ideoshot")]
pub fn ideoshot_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IdeoshotError", m.py().get_type::<IdeoshotError>())?;
    m.add_class::<SyntheticCorpus>()?;
    m.add_class::<CandidatePool>()?;
    m.add_function(wrap_pyfunction!(bsr, m)?)?;
    m.add_function(wrap_pyfunction!(set_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(class_quota, m)?)?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(label_for_score, m)?)?;
    m.add_function(wrap_pyfunction!(instruction, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
