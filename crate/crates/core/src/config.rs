//! Run configuration: one TOML file per run, overridable from the command
//! line, with a stable digest stamped on every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LabelMapping, LabelScheme};
use crate::coverage::{OrderingMode, PoolConfig, TokenWeighting};
use crate::embedding::{EmbeddingProviderConfig, ProviderKind};
use crate::error::{Error, Result};
use crate::evaluation::{BootstrapConfig, MlpHyper};
use crate::llm::LlmConfig;
use crate::prompting::{DemoOrder, FieldConfig, RenderOptions};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Balanced,
    Random,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "balanced" => Ok(SelectionMode::Balanced),
            "random" => Ok(SelectionMode::Random),
            other => Err(Error::invalid(format!("unknown selection mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMode::Balanced => "balanced",
            SelectionMode::Random => "random",
        })
    }
}

/// Parses `set-bsr` / `bsr` as used on the command line.
pub fn parse_ordering(s: &str) -> Result<OrderingMode> {
    match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "set-bsr" | "set-bsr-greedy" => Ok(OrderingMode::SetBsrGreedy),
        "bsr" | "independent-bsr" => Ok(OrderingMode::IndependentBsr),
        other => Err(Error::invalid(format!("unknown ordering {other:?}"))),
    }
}

mod field_string {
    use super::FieldConfig;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &FieldConfig, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(f)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FieldConfig, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub provider: ProviderKind,
    /// Precomputed file path or service URL.
    pub location: String,
    pub dim: usize,
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub max_retries: u32,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            provider: ProviderKind::PrecomputedFile,
            location: String::new(),
            dim: 384,
            cache_dir: None,
            max_in_flight: 8,
            max_retries: 3,
        }
    }
}

impl EmbeddingSettings {
    pub fn provider_config(&self) -> EmbeddingProviderConfig {
        EmbeddingProviderConfig {
            kind: self.provider,
            location: self.location.clone(),
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsetFilter {
    pub political: Option<bool>,
    pub news_channel: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub label_scheme: LabelScheme,
    /// Overrides the scheme's default cutoffs.
    pub cutoffs: Option<(f64, f64)>,
    pub filter: SubsetFilter,
    #[serde(with = "field_string")]
    pub fields: FieldConfig,
    pub k: usize,
    pub select: SelectionMode,
    pub order: OrderingMode,
    pub weighting: TokenWeighting,
    pub pool_size: usize,
    pub probe_size: usize,
    pub seed: u64,
    pub cot: bool,
    pub demo_order: DemoOrder,
    pub char_budget: Option<usize>,
    pub embeddings: EmbeddingSettings,
    pub llm: LlmConfig,
    /// Deterministic stand-in model, e.g. `echo_majority`.
    pub mock: Option<String>,
    pub bootstrap: BootstrapConfig,
    pub mlp: MlpHyper,
    /// Output directory; not part of the config hash.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            test_dataset: None,
            label_scheme: LabelScheme::Direct,
            cutoffs: None,
            filter: SubsetFilter::default(),
            fields: FieldConfig::TITLE,
            k: 8,
            select: SelectionMode::Balanced,
            order: OrderingMode::SetBsrGreedy,
            weighting: TokenWeighting::Uniform,
            pool_size: 500,
            probe_size: 2000,
            seed: 0,
            cot: false,
            demo_order: DemoOrder::Admission,
            char_budget: None,
            embeddings: EmbeddingSettings::default(),
            llm: LlmConfig::default(),
            mock: None,
            bootstrap: BootstrapConfig::default(),
            mlp: MlpHyper::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.fields.validate()?;
        self.label_mapping().validate()?;
        self.llm.validate()?;
        if self.probe_size == 0 {
            return Err(Error::invalid("probe_size must be at least 1"));
        }
        Ok(())
    }

    pub fn label_mapping(&self) -> LabelMapping {
        let mut m = LabelMapping::for_scheme(self.label_scheme);
        if let Some((lo, hi)) = self.cutoffs {
            m.lo_cutoff = lo;
            m.hi_cutoff = hi;
        }
        m
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            pool_size: self.pool_size,
            probe_size: self.probe_size,
            seed: self.seed,
            weighting: self.weighting,
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            cot: self.cot,
            demo_order: self.demo_order,
            char_budget: self.char_budget,
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form, with
    /// the output directory left out.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config is always serializable");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out");
        }
        // serde_json maps are ordered by key, so this is canonical.
        let canonical = serde_json::to_string(&value).expect("value is serializable");
        hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            fields: FieldConfig::TITLE_SOURCE,
            k: 12,
            mock: Some("echo_majority".into()),
            cutoffs: Some((-0.5, 0.5)),
            ..RunConfig::default()
        };
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("fields = \"title-source\""), "{text}");
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg: RunConfig = toml::from_str("k = 4\nselect = \"random\"\n[llm]\ntemperature = 0.5\n").unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.select, SelectionMode::Random);
        assert_eq!(cfg.llm.temperature, 0.5);
        assert_eq!(cfg.llm.max_retries, LlmConfig::default().max_retries);
        assert_eq!(cfg.pool_size, 500);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: "elsewhere".into(),
            ..RunConfig::default()
        };
        let c = RunConfig {
            k: 4,
            ..RunConfig::default()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn api_key_never_serialized() {
        let mut cfg = RunConfig::default();
        cfg.llm.api_key = Some("secret".into());
        assert!(!cfg.to_toml().unwrap().contains("secret"));
        assert_eq!(cfg.config_hash(), RunConfig::default().config_hash());
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_ordering("set-bsr").unwrap(), OrderingMode::SetBsrGreedy);
        assert_eq!(parse_ordering("bsr").unwrap(), OrderingMode::IndependentBsr);
        assert!(parse_ordering("mmr").is_err());
        assert_eq!("Random".parse::<SelectionMode>().unwrap(), SelectionMode::Random);
    }
}
