//! Dataset ingestion, score-to-label mapping, and subset slicing.
//!
//! Datasets are JSONL files with one [`ContentItem`] per line. Items carry
//! either a gold [`Ideology`] directly or a dataset-native score that is
//! mapped through a [`LabelMapping`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way ideology label. The derived ordering (Liberal < Neutral <
/// Conservative) is the tie-breaking order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ideology {
    Liberal,
    Neutral,
    Conservative,
}

impl Ideology {
    pub const ALL: [Ideology; 3] = [Ideology::Liberal, Ideology::Neutral, Ideology::Conservative];

    pub fn index(self) -> usize {
        match self {
            Ideology::Liberal => 0,
            Ideology::Neutral => 1,
            Ideology::Conservative => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Ideology> {
        Self::ALL.get(i).copied()
    }

    /// Lowercase word as it appears in instructions and model answers.
    pub fn as_word(self) -> &'static str {
        match self {
            Ideology::Liberal => "liberal",
            Ideology::Neutral => "neutral",
            Ideology::Conservative => "conservative",
        }
    }
}

impl fmt::Display for Ideology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ideology::Liberal => "Liberal",
            Ideology::Neutral => "Neutral",
            Ideology::Conservative => "Conservative",
        })
    }
}

impl FromStr for Ideology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "liberal" => Ok(Ideology::Liberal),
            "neutral" => Ok(Ideology::Neutral),
            "conservative" => Ok(Ideology::Conservative),
            other => Err(Error::invalid(format!("unknown ideology label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetFlags {
    #[serde(default)]
    pub political: Option<bool>,
    #[serde(default)]
    pub news_channel: Option<bool>,
}

/// One classifiable unit: a video, post, or article.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContentItem {
    pub id: String,
    pub title: String,
    pub source: Option<String>,
    pub description: Option<String>,
    pub label: Option<Ideology>,
    #[serde(rename = "score")]
    pub raw_score: Option<f64>,
    pub flags: SubsetFlags,
}

impl ContentItem {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        ContentItem {
            id: id.into(),
            title: title.into(),
            source: None,
            description: None,
            label: None,
            raw_score: None,
            flags: SubsetFlags::default(),
        }
    }

    pub fn with_label(mut self, label: Ideology) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    YoutubeSlant,
    Adfontes,
    Direct,
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "youtube_slant" | "youtube" => Ok(LabelScheme::YoutubeSlant),
            "adfontes" | "ad_fontes" => Ok(LabelScheme::Adfontes),
            "direct" | "allsides" => Ok(LabelScheme::Direct),
            other => Err(Error::invalid(format!("unknown label scheme {other:?}"))),
        }
    }
}

/// Cutoffs that turn a raw slant/bias score into an [`Ideology`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub scheme: LabelScheme,
    pub lo_cutoff: f64,
    pub hi_cutoff: f64,
}

impl LabelMapping {
    /// YouTube slant scores: Liberal at or below -0.33, Conservative at or above +0.33.
    pub fn youtube_slant() -> Self {
        LabelMapping {
            scheme: LabelScheme::YoutubeSlant,
            lo_cutoff: -0.33,
            hi_cutoff: 0.33,
        }
    }

    /// Ad Fontes bias scores with the ±14 skew cutoffs.
    pub fn adfontes() -> Self {
        LabelMapping {
            scheme: LabelScheme::Adfontes,
            lo_cutoff: -14.0,
            hi_cutoff: 14.0,
        }
    }

    /// Labels are taken verbatim from the dataset; cutoffs are ignored.
    pub fn direct() -> Self {
        LabelMapping {
            scheme: LabelScheme::Direct,
            lo_cutoff: f64::NEG_INFINITY,
            hi_cutoff: f64::INFINITY,
        }
    }

    pub fn for_scheme(scheme: LabelScheme) -> Self {
        match scheme {
            LabelScheme::YoutubeSlant => Self::youtube_slant(),
            LabelScheme::Adfontes => Self::adfontes(),
            LabelScheme::Direct => Self::direct(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme != LabelScheme::Direct && !(self.lo_cutoff < self.hi_cutoff) {
            return Err(Error::invalid(format!(
                "label cutoffs must satisfy lo < hi (got {} and {})",
                self.lo_cutoff, self.hi_cutoff
            )));
        }
        Ok(())
    }
}

/// Maps a raw score to a label. Cutoffs are inclusive toward the extreme
/// classes: `score <= lo` is Liberal and `score >= hi` is Conservative.
pub fn map_label(raw_score: f64, mapping: &LabelMapping) -> Result<Ideology> {
    if mapping.scheme == LabelScheme::Direct {
        return Err(Error::invalid("the direct scheme has no score cutoffs"));
    }
    mapping.validate()?;
    if !raw_score.is_finite() {
        return Err(Error::NonFiniteScore(raw_score));
    }
    Ok(if raw_score <= mapping.lo_cutoff {
        Ideology::Liberal
    } else if raw_score >= mapping.hi_cutoff {
        Ideology::Conservative
    } else {
        Ideology::Neutral
    })
}

#[derive(Deserialize)]
struct RawItem {
    id: Option<String>,
    title: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    flags: Option<SubsetFlags>,
}

/// Reads a JSONL dataset file. Blank lines are ignored.
pub fn load_dataset(path: impl AsRef<Path>, mapping: &LabelMapping) -> Result<Vec<ContentItem>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_dataset(BufReader::new(file), path, mapping)
}

/// Like [`load_dataset`] but over any reader; `path` is only used in error messages.
pub fn parse_dataset<R: BufRead>(
    reader: R,
    path: impl Into<PathBuf>,
    mapping: &LabelMapping,
) -> Result<Vec<ContentItem>> {
    let path = path.into();
    mapping.validate()?;
    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.clone(),
            line: line_no,
            message,
        };

        let raw: RawItem = serde_json::from_str(&line).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
        let id = raw.id.filter(|s| !s.is_empty()).ok_or_else(|| parse_err("missing id".into()))?;
        let title = raw
            .title
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| parse_err(format!("item {id:?} has no title")))?;

        if let Some(&first_line) = seen.get(&id) {
            return Err(Error::DuplicateId {
                path,
                line: line_no,
                first_line,
                id,
            });
        }
        seen.insert(id.clone(), line_no);

        let mut label = match raw.label {
            Some(s) => Some(s.parse::<Ideology>().map_err(|e| parse_err(e.to_string()))?),
            None => None,
        };
        if label.is_none() {
            if let Some(score) = raw.score {
                if mapping.scheme == LabelScheme::Direct {
                    return Err(parse_err(format!(
                        "item {id:?} has a score but no label, and the direct scheme cannot map scores"
                    )));
                }
                label = Some(map_label(score, mapping).map_err(|e| parse_err(e.to_string()))?);
            }
        }
        if label.is_none() {
            return Err(parse_err(format!("item {id:?} has neither a label nor a score")));
        }

        items.push(ContentItem {
            id,
            title,
            source: raw.source,
            description: raw.description,
            label,
            raw_score: raw.score,
            flags: raw.flags.unwrap_or_default(),
        });
    }
    Ok(items)
}

/// Writes items back out in the dataset JSONL schema.
pub fn write_dataset(path: impl AsRef<Path>, items: &[ContentItem]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub items: Vec<ContentItem>,
    /// Items dropped because a required flag was missing.
    pub skipped: usize,
}

/// Keeps items whose flags match every non-null criterion. Items lacking a
/// flag that a criterion needs are dropped and tallied in `skipped`.
pub fn filter_subset(items: &[ContentItem], political: Option<bool>, news_channel: Option<bool>) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut skipped = 0;
    for item in items {
        let checks = [(political, item.flags.political), (news_channel, item.flags.news_channel)];
        let mut keep = true;
        let mut missing = false;
        for (want, have) in checks {
            if let Some(want) = want {
                match have {
                    None => missing = true,
                    Some(h) if h != want => keep = false,
                    Some(_) => {}
                }
            }
        }
        if missing {
            skipped += 1;
        } else if keep {
            kept.push(item.clone());
        }
    }
    FilterOutcome { items: kept, skipped }
}

fn normalize_source(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Case- and whitespace-insensitive map from outlet name to ideology.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceIdeologyMap {
    entries: BTreeMap<String, Ideology>,
}

impl SourceIdeologyMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: &str, ideology: Ideology) {
        self.entries.insert(normalize_source(source), ideology);
    }

    /// `None` means the source is unknown. There is no default ideology.
    pub fn lookup(&self, source: &str) -> Option<Ideology> {
        self.entries.get(&normalize_source(source)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads a JSON object of `{source_name: "liberal" | "conservative"}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, String> = serde_json::from_str(text)?;
        let mut map = Self::new();
        for (name, label) in raw {
            map.insert(&name, label.parse()?);
        }
        Ok(map)
    }

    /// Outlets rated left or right by the AllSides media bias chart.
    pub fn allsides_reference() -> Self {
        const LIBERAL: &[&str] = &[
            "ABC News",
            "Associated Press",
            "CBC News",
            "CBS News",
            "CNN",
            "Daily Beast",
            "HuffPost",
            "Jacobin",
            "MSNBC",
            "Mother Jones",
            "NPR",
            "Slate",
            "The Atlantic",
            "The Guardian",
            "The Intercept",
            "The Nation",
            "The New York Times",
            "The New Yorker",
            "Vox",
        ];
        const CONSERVATIVE: &[&str] = &[
            "Breitbart",
            "CBN",
            "Daily Caller",
            "Daily Mail",
            "Daily Wire",
            "Fox Business",
            "Fox News",
            "New York Post",
            "Newsmax",
            "The American Conservative",
            "The American Spectator",
            "The Blaze",
            "The Daily Caller",
            "The Epoch Times",
            "The Federalist",
            "The Federalist Society",
            "The Post Millennial",
            "The Washington Free Beacon",
            "Washington Examiner",
        ];
        let mut map = Self::new();
        for name in LIBERAL {
            map.insert(name, Ideology::Liberal);
        }
        for name in CONSERVATIVE {
            map.insert(name, Ideology::Conservative);
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSide {
    LiberalSources,
    ConservativeSources,
}

/// Items whose gold label disagrees with the known ideology of their source:
/// neutral/conservative items from liberal outlets, or liberal/neutral items
/// from conservative outlets.
pub fn misleading_slice(items: &[ContentItem], src_map: &SourceIdeologyMap, side: SourceSide) -> Vec<ContentItem> {
    let source_label = match side {
        SourceSide::LiberalSources => Ideology::Liberal,
        SourceSide::ConservativeSources => Ideology::Conservative,
    };
    items
        .iter()
        .filter(|item| {
            let (Some(source), Some(label)) = (item.source.as_deref(), item.label) else {
                return false;
            };
            src_map.lookup(source) == Some(source_label) && label != source_label
        })
        .cloned()
        .collect()
}
