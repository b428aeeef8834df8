//! Command-line entry point. Each subcommand merges the optional config
//! file with flag overrides, writes the effective config next to its
//! outputs, and stamps every artifact with the config hash.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_ordering, RunConfig};
use crate::error::{Error, Result};
use crate::prompting::FieldConfig;

pub use commands::execute;

#[derive(Debug, Parser)]
#[command(name = "ideoshot", version, about = "Coverage-based few-shot demonstration selection for ideology classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and label datasets, writing normalized copies.
    Ingest(RunArgs),
    /// Embed train and test items into the output directory.
    Embed(RunArgs),
    /// Build the candidate pool from the training set.
    Pool(RunArgs),
    /// Select demonstrations, prompt the model and write predictions.
    Classify(RunArgs),
    /// Score prediction files into a report.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Prediction files to score together; defaults to the output
        /// directory's predictions.
        #[arg(long = "predictions")]
        predictions: Vec<PathBuf>,
    },
    /// Paired significance test between two prediction files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Exact binomial test instead of the corrected chi-square.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep k over {0, 4, 8, 12} and the four field configurations.
    Ablate(RunArgs),
    /// Train and score the sentence-embedding MLP baseline.
    Mlp(RunArgs),
    /// Write a seeded synthetic corpus with embeddings and a starter config.
    Synth {
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n_train: usize,
        #[arg(long, default_value_t = 150)]
        n_test: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub test_dataset: Option<PathBuf>,
    /// youtube_slant, adfontes or direct.
    #[arg(long)]
    pub label_scheme: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// title, title-source, title-desc or title-source-desc.
    #[arg(long)]
    pub fields: Option<String>,
    /// balanced or random.
    #[arg(long)]
    pub select: Option<String>,
    /// set-bsr or bsr.
    #[arg(long)]
    pub order: Option<String>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub probe_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// echo_majority, nearest_demo, fixed:<label> or scripted:<path>.
    #[arg(long)]
    pub mock: Option<String>,
    /// Precomputed embeddings file or embedding service URL.
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub cot: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// Config file (or defaults) with every given flag applied.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = Some(v.clone());
        }
        if let Some(v) = &self.test_dataset {
            cfg.test_dataset = Some(v.clone());
        }
        if let Some(v) = &self.label_scheme {
            cfg.label_scheme = v.parse()?;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = &self.fields {
            cfg.fields = v.parse::<FieldConfig>()?;
        }
        if let Some(v) = &self.select {
            cfg.select = v.parse()?;
        }
        if let Some(v) = &self.order {
            cfg.order = parse_ordering(v)?;
        }
        if let Some(v) = self.pool_size {
            cfg.pool_size = v;
        }
        if let Some(v) = self.probe_size {
            cfg.probe_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.mock {
            cfg.mock = Some(v.clone());
        }
        if let Some(v) = &self.embeddings {
            cfg.embeddings.location = v.clone();
            if v.starts_with("http://") || v.starts_with("https://") {
                cfg.embeddings.provider = crate::embedding::ProviderKind::HttpService;
            }
        }
        if let Some(v) = &self.cache_dir {
            cfg.embeddings.cache_dir = Some(v.clone());
        }
        if self.cot {
            cfg.cot = true;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses arguments (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    execute(&cli.command)
}
