use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Command;
use crate::config::RunConfig;
use crate::corpus::{filter_subset, load_dataset, write_dataset, ContentItem};
use crate::coverage::{build_candidate_pool, CandidatePool};
use crate::embedding::{embed_all, EmbeddingCache, EmbeddingStore};
use crate::error::{Error, Result};
use crate::evaluation::{
    mcnemar, mlp_predict, mlp_train, score, Comparison, EvalReport, McNemarMode, MlpHyper, RunDescriptor,
};
use crate::llm::{ChatModel, HttpChatModel, MockKind, MockLlm, ParseStatus, PredictionRecord};
use crate::pipeline::classify_test_set;
use crate::prompting::FieldConfig;
use crate::selection::SelectionTrace;
use crate::synthetic::{SyntheticConfig, SyntheticCorpus};

pub const ABLATION_KS: [usize; 4] = [0, 4, 8, 12];

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

fn dump_config(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.out)?;
    let text = format!("# config_hash = \"{}\"\n{}", cfg.config_hash(), cfg.to_toml()?);
    write_text(&cfg.out.join("config.toml"), &text)
}

#[derive(Debug, Serialize)]
struct SplitSummary {
    split: &'static str,
    n: usize,
    liberal: usize,
    neutral: usize,
    conservative: usize,
    /// Dropped for lacking a flag the subset filter needs.
    missing_flags: usize,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    config_hash: String,
    splits: Vec<SplitSummary>,
}

fn load_split(cfg: &RunConfig, path: &Path, split: &'static str) -> Result<(Vec<ContentItem>, SplitSummary)> {
    let items = load_dataset(path, &cfg.label_mapping())?;
    let filtered = filter_subset(&items, cfg.filter.political, cfg.filter.news_channel);
    if filtered.skipped > 0 {
        log::warn!("{split}: {} items lack a flag needed by the subset filter", filtered.skipped);
    }
    let mut counts = [0usize; 3];
    for item in &filtered.items {
        if let Some(l) = item.label {
            counts[l.index()] += 1;
        }
    }
    let summary = SplitSummary {
        split,
        n: filtered.items.len(),
        liberal: counts[0],
        neutral: counts[1],
        conservative: counts[2],
        missing_flags: filtered.skipped,
    };
    Ok((filtered.items, summary))
}

struct Splits {
    train: Vec<ContentItem>,
    test: Option<Vec<ContentItem>>,
    summaries: Vec<SplitSummary>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::invalid("no dataset given (--dataset or `dataset` in the config)"))?;
    let (train, s) = load_split(cfg, path, "train")?;
    let mut summaries = vec![s];
    let test = match &cfg.test_dataset {
        Some(p) => {
            let (test, s) = load_split(cfg, p, "test")?;
            summaries.push(s);
            Some(test)
        }
        None => None,
    };
    Ok(Splits { train, test, summaries })
}

fn require_test(splits: &Splits) -> Result<&[ContentItem]> {
    splits
        .test
        .as_deref()
        .ok_or_else(|| Error::invalid("this command needs a test set (--test-dataset)"))
}

/// Loads embeddings for `items` from `path` when it has them all under the
/// configured fields; otherwise embeds through the provider and rewrites it.
fn ensure_embeddings(cfg: &RunConfig, items: &[ContentItem], path: &Path) -> Result<EmbeddingStore> {
    let fields_hash = cfg.fields.fields_hash();
    if path.exists() {
        let store = EmbeddingStore::load_jsonl(path, &fields_hash)?;
        if items.iter().all(|i| store.contains(&i.id)) {
            return Ok(store);
        }
    }
    if cfg.embeddings.location.is_empty() {
        return Err(Error::invalid(
            "no embeddings available: set `embeddings.location` or pass --embeddings",
        ));
    }
    let provider = cfg.embeddings.provider_config().build()?;
    let cache = cfg.embeddings.cache_dir.as_ref().map(EmbeddingCache::new).transpose()?;
    let mut seen = HashSet::new();
    let unique: Vec<ContentItem> = items.iter().filter(|i| seen.insert(i.id.clone())).cloned().collect();
    let store = embed_all(
        &unique,
        &cfg.fields,
        provider.as_ref(),
        cache.as_ref(),
        cfg.embeddings.max_in_flight,
        cfg.embeddings.max_retries,
    )?;
    let records: Vec<_> = store.sorted().into_iter().map(|s| s.to_record(&fields_hash)).collect();
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    write_jsonl(path, &records)?;
    Ok(store)
}

fn all_items(splits: &Splits) -> Vec<ContentItem> {
    splits.train.iter().chain(splits.test.iter().flatten()).cloned().collect()
}

/// Reuses `path` when it was built with the same pool settings.
fn ensure_pool(cfg: &RunConfig, train: &[ContentItem], store: &EmbeddingStore, path: &Path) -> Result<CandidatePool> {
    if path.exists() {
        let (pool, _) = CandidatePool::read_jsonl(path)?;
        if pool.config == cfg.pool_config() && pool.entries.iter().all(|e| store.contains(&e.id)) {
            return Ok(pool);
        }
        log::info!("{} was built with other settings; rebuilding", path.display());
    }
    let pool = build_candidate_pool(train, store, &cfg.pool_config())?;
    pool.write_jsonl(path, Some(&cfg.config_hash()))?;
    Ok(pool)
}

fn build_model(cfg: &RunConfig) -> Result<Box<dyn ChatModel>> {
    Ok(match &cfg.mock {
        Some(spec) => Box::new(MockLlm::new(spec.parse::<MockKind>()?)),
        None => Box::new(HttpChatModel::new(&cfg.llm.clone().with_env())),
    })
}

fn model_name(cfg: &RunConfig) -> String {
    match &cfg.mock {
        Some(m) => format!("mock:{m}"),
        None => cfg.llm.model_name.clone(),
    }
}

fn descriptor(cfg: &RunConfig) -> RunDescriptor {
    RunDescriptor {
        dataset: cfg
            .test_dataset
            .as_ref()
            .or(cfg.dataset.as_ref())
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
        k: cfg.k,
        fields: cfg.fields.to_string(),
        selection: cfg.select.to_string(),
        model: model_name(cfg),
    }
}

/// Classifies the test split into `dir`, returning the records and report.
fn classify_into(
    cfg: &RunConfig,
    splits: &Splits,
    store: &EmbeddingStore,
    pool: &CandidatePool,
    dir: &Path,
) -> Result<(Vec<PredictionRecord>, EvalReport)> {
    let test = require_test(splits)?;
    let hash = cfg.config_hash();
    let model = build_model(cfg)?;
    let out = classify_test_set(&splits.train, test, pool, store, model.as_ref(), cfg, &hash)?;
    ensure_dir(dir)?;
    write_jsonl(&dir.join("predictions.jsonl"), &out.predictions)?;
    let traces: Vec<SelectionTrace> = out
        .selections
        .into_iter()
        .map(|s| {
            s.trace.unwrap_or_else(|| SelectionTrace {
                query_id: s.demos.query_id.clone(),
                k: s.demos.k_requested,
                members: s.demos.members,
                skipped: Vec::new(),
                fallback_used: s.demos.fallback_used,
            })
        })
        .collect();
    write_jsonl(&dir.join("selection_trace.jsonl"), &traces)?;
    let report = score(&out.predictions, descriptor(cfg), &cfg.bootstrap)?;
    Ok((out.predictions, report))
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label}: n={} accuracy={:.4} ci95=[{:.4}, {:.4}] parse_failures={} config_hash={}",
        r.n, r.accuracy, r.ci95.0, r.ci95.1, r.parse_failure_count, r.config_hash
    );
}

#[derive(Debug, Serialize, Deserialize)]
struct AblationCell {
    fields: String,
    k: usize,
    config_hash: String,
    n: usize,
    accuracy: f64,
    ci95: (f64, f64),
    parse_failure_count: usize,
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    dump_config(cfg)?;
    write_dataset(cfg.out.join("train.jsonl"), &splits.train)?;
    if let Some(test) = &splits.test {
        write_dataset(cfg.out.join("test.jsonl"), test)?;
    }
    let summary = IngestSummary {
        config_hash: cfg.config_hash(),
        splits: splits.summaries,
    };
    write_json(&cfg.out.join("ingest.json"), &summary)?;
    for s in &summary.splits {
        println!(
            "{}: {} items (liberal {}, neutral {}, conservative {})",
            s.split, s.n, s.liberal, s.neutral, s.conservative
        );
    }
    Ok(())
}

fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    dump_config(cfg)?;
    let path = cfg.out.join("embeddings.jsonl");
    let store = ensure_embeddings(cfg, &all_items(&splits), &path)?;
    println!("{} embeddings in {}", store.len(), path.display());
    Ok(())
}

fn cmd_pool(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    dump_config(cfg)?;
    let store = ensure_embeddings(cfg, &all_items(&splits), &cfg.out.join("embeddings.jsonl"))?;
    let pool = build_candidate_pool(&splits.train, &store, &cfg.pool_config())?;
    let path = cfg.out.join("pool.jsonl");
    pool.write_jsonl(&path, Some(&cfg.config_hash()))?;
    println!("pool of {} candidates in {}", pool.len(), path.display());
    Ok(())
}

fn cmd_classify(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    require_test(&splits)?;
    dump_config(cfg)?;
    let store = ensure_embeddings(cfg, &all_items(&splits), &cfg.out.join("embeddings.jsonl"))?;
    let pool = ensure_pool(cfg, &splits.train, &store, &cfg.out.join("pool.jsonl"))?;
    let (preds, report) = classify_into(cfg, &splits, &store, &pool, &cfg.out)?;
    let failures = preds.iter().filter(|p| p.parse_status != ParseStatus::Ok).count();
    println!(
        "{} predictions in {} ({failures} without a usable label)",
        preds.len(),
        cfg.out.join("predictions.jsonl").display()
    );
    print_report("accuracy", &report);
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, files: &[PathBuf]) -> Result<()> {
    let files = if files.is_empty() {
        vec![cfg.out.join("predictions.jsonl")]
    } else {
        files.to_vec()
    };
    let mut records: Vec<PredictionRecord> = Vec::new();
    for f in &files {
        records.extend(read_jsonl::<PredictionRecord>(f)?);
    }
    let report = score(&records, descriptor(cfg), &cfg.bootstrap)?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    print_report("report", &report);
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path, exact: bool, out: Option<&Path>) -> Result<()> {
    let ra: Vec<PredictionRecord> = read_jsonl(a)?;
    let rb: Vec<PredictionRecord> = read_jsonl(b)?;
    let mode = if exact { McNemarMode::Exact } else { McNemarMode::Corrected };
    let result = mcnemar(&ra, &rb, mode)?;
    let cmp = Comparison::new(a.display().to_string(), b.display().to_string(), &result);
    let text = serde_json::to_string(&cmp)?;
    println!("{text}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("comparison.json"), &cmp)?;
    }
    Ok(())
}

fn cmd_ablate(base: &RunConfig) -> Result<()> {
    let splits = load_splits(base)?;
    require_test(&splits)?;
    dump_config(base)?;
    let items = all_items(&splits);
    let root = base.out.join("ablate");
    let mut cells = Vec::new();
    for fields in FieldConfig::ABLATION_GRID {
        let fcfg = RunConfig {
            fields,
            ..base.clone()
        };
        let fdir = root.join(fields.to_string());
        let store = ensure_embeddings(&fcfg, &items, &fdir.join("embeddings.jsonl"))?;
        let pool = ensure_pool(&fcfg, &splits.train, &store, &fdir.join("pool.jsonl"))?;
        for k in ABLATION_KS {
            let cell = RunConfig {
                k,
                out: fdir.join(format!("k{k}")),
                ..fcfg.clone()
            };
            let (_, report) = classify_into(&cell, &splits, &store, &pool, &cell.out)?;
            write_json(&cell.out.join("report.json"), &report)?;
            print_report(&format!("{fields} k={k}"), &report);
            cells.push(AblationCell {
                fields: fields.to_string(),
                k,
                config_hash: report.config_hash.clone(),
                n: report.n,
                accuracy: report.accuracy,
                ci95: report.ci95,
                parse_failure_count: report.parse_failure_count,
            });
        }
    }
    write_json(&root.join("summary.json"), &cells)?;
    println!("{} reports under {}", cells.len(), root.display());
    Ok(())
}

fn cmd_mlp(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    let test = require_test(&splits)?;
    dump_config(cfg)?;
    let store = ensure_embeddings(cfg, &all_items(&splits), &cfg.out.join("embeddings.jsonl"))?;
    let model = mlp_train(&splits.train, &store, &cfg.mlp)?;
    let hash = cfg.config_hash();
    let mut preds = test
        .iter()
        .map(|item| {
            let pred = mlp_predict(&model, store.get(&item.id)?.sentence())?;
            Ok(PredictionRecord {
                query_id: item.id.clone(),
                gold: item.label,
                pred: Some(pred),
                raw_response: pred.as_word().to_string(),
                parse_status: ParseStatus::Ok,
                attempts: 0,
                config_hash: hash.clone(),
                error: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    preds.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    write_jsonl(&cfg.out.join("mlp_predictions.jsonl"), &preds)?;
    let desc = RunDescriptor {
        model: "mlp".into(),
        k: 0,
        selection: "none".into(),
        ..descriptor(cfg)
    };
    let report = score(&preds, desc, &cfg.bootstrap)?;
    write_json(&cfg.out.join("mlp_report.json"), &report)?;
    print_report("mlp", &report);
    Ok(())
}

fn cmd_synth(out: &Path, cfg: SyntheticConfig) -> Result<()> {
    ensure_dir(out)?;
    let corpus = SyntheticCorpus::generate(&cfg);
    let train = out.join("train.jsonl");
    let test = out.join("test.jsonl");
    let emb = out.join("embeddings.jsonl");
    write_dataset(&train, &corpus.train)?;
    write_dataset(&test, &corpus.test)?;
    let hashes: Vec<String> = FieldConfig::ABLATION_GRID.iter().map(FieldConfig::fields_hash).collect();
    corpus.write_embeddings(&emb, &hashes)?;

    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let mut run = RunConfig {
        dataset: Some(abs(&train)),
        test_dataset: Some(abs(&test)),
        mock: Some("echo_majority".into()),
        pool_size: (cfg.n_train / 2).max(1),
        probe_size: cfg.n_train.max(1),
        out: abs(&out.join("run")),
        mlp: MlpHyper {
            input_dim: cfg.dim,
            ..MlpHyper::default()
        },
        ..RunConfig::default()
    };
    run.embeddings.location = abs(&emb).display().to_string();
    run.embeddings.dim = cfg.dim;
    write_text(&out.join("config.toml"), &run.to_toml()?)?;
    println!(
        "{} train / {} test items and embeddings in {}; starter config at {}",
        corpus.train.len(),
        corpus.test.len(),
        out.display(),
        out.join("config.toml").display()
    );
    Ok(())
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a.effective_config()?),
        Command::Embed(a) => cmd_embed(&a.effective_config()?),
        Command::Pool(a) => cmd_pool(&a.effective_config()?),
        Command::Classify(a) => cmd_classify(&a.effective_config()?),
        Command::Eval { run, predictions } => cmd_eval(&run.effective_config()?, predictions),
        Command::Compare { a, b, exact, out } => cmd_compare(a, b, *exact, out.as_deref()),
        Command::Ablate(a) => cmd_ablate(&a.effective_config()?),
        Command::Mlp(a) => cmd_mlp(&a.effective_config()?),
        Command::Synth {
            out,
            n_train,
            n_test,
            dim,
            label_noise,
            seed,
        } => cmd_synth(
            out,
            SyntheticConfig {
                n_train: *n_train,
                n_test: *n_test,
                dim: *dim,
                label_noise: *label_noise,
                seed: *seed,
                ..SyntheticConfig::default()
            },
        ),
    }
}
