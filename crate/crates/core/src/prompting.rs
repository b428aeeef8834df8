//! Instruction prompts, demonstration blocks, and query rendering.
//!
//! Every block uses the same line format:
//!
//! ```text
//! Title: <title>
//! Source: <source>
//! Description: <description>
//! Ideology: <Label>
//! ```
//!
//! Field lines appear only when enabled by the [`FieldConfig`] and present on
//! the item. The query block omits the `Ideology:` line.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ContentItem, Ideology};
use crate::error::{Error, Result};
use crate::selection::DemonstrationSet;

const INSTRUCTION_HEAD: &str = "Classify the following news article titles as ideologically liberal, neutral, or conservative. Titles with no ideological content are classified as neutral.";
const SOURCE_SENTENCE: &str = "The news source is also specified for additional context.";
const DESCRIPTION_SENTENCE: &str = "The news description is also specified for additional context.";
const ANSWER_ONLY: &str = "Only respond with the final answer.";
const COT_DIRECTIVE: &str =
    "Think through the task step-by-step, then give the final answer on its own last line in the form \"Answer: <label>\".";

/// Which item fields are rendered into prompts and embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldConfig {
    pub include_title: bool,
    pub include_source: bool,
    pub include_description: bool,
}

impl FieldConfig {
    pub const TITLE: FieldConfig = FieldConfig::new(true, false, false);
    pub const TITLE_SOURCE: FieldConfig = FieldConfig::new(true, true, false);
    pub const TITLE_DESCRIPTION: FieldConfig = FieldConfig::new(true, false, true);
    pub const TITLE_SOURCE_DESCRIPTION: FieldConfig = FieldConfig::new(true, true, true);

    /// The four combinations used in the field ablation, in sweep order.
    pub const ABLATION_GRID: [FieldConfig; 4] = [
        Self::TITLE,
        Self::TITLE_SOURCE,
        Self::TITLE_DESCRIPTION,
        Self::TITLE_SOURCE_DESCRIPTION,
    ];

    pub const fn new(include_title: bool, include_source: bool, include_description: bool) -> Self {
        FieldConfig {
            include_title,
            include_source,
            include_description,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.include_title || self.include_source || self.include_description) {
            return Err(Error::invalid("field config must enable at least one field"));
        }
        Ok(())
    }

    /// Stable short digest identifying this configuration in cache keys.
    pub fn fields_hash(&self) -> String {
        let canonical = format!(
            "title={};source={};description={}",
            self.include_title as u8, self.include_source as u8, self.include_description as u8
        );
        hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
    }

    /// `(name, value)` pairs of the configured fields present on `item`, in
    /// Title/Source/Description order.
    pub fn present_fields<'a>(&self, item: &'a ContentItem) -> Vec<(&'static str, &'a str)> {
        let mut out = Vec::with_capacity(3);
        if self.include_title && !item.title.is_empty() {
            out.push(("Title", item.title.as_str()));
        }
        if self.include_source {
            if let Some(s) = item.source.as_deref().filter(|s| !s.is_empty()) {
                out.push(("Source", s));
            }
        }
        if self.include_description {
            if let Some(d) = item.description.as_deref().filter(|d| !d.is_empty()) {
                out.push(("Description", d));
            }
        }
        out
    }

    /// Plain text handed to the embedding provider: configured field values
    /// joined by newlines, without line prefixes.
    pub fn embedding_text(&self, item: &ContentItem) -> String {
        self.present_fields(item)
            .into_iter()
            .map(|(_, v)| v)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for FieldConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.include_title {
            parts.push("title");
        }
        if self.include_source {
            parts.push("source");
        }
        if self.include_description {
            parts.push("desc");
        }
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for FieldConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = FieldConfig::new(false, false, false);
        for part in s.split(['-', '+', ',']) {
            match part.trim().to_ascii_lowercase().as_str() {
                "title" | "t" => cfg.include_title = true,
                "source" | "s" => cfg.include_source = true,
                "desc" | "description" | "d" => cfg.include_description = true,
                other => return Err(Error::invalid(format!("unknown field {other:?} in {s:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Instruction text for a field configuration, optionally in the
/// chain-of-thought variant.
pub fn instruction_for(config: &FieldConfig, cot: bool) -> String {
    let mut parts = vec![INSTRUCTION_HEAD];
    if config.include_source {
        parts.push(SOURCE_SENTENCE);
    }
    if config.include_description {
        parts.push(DESCRIPTION_SENTENCE);
    }
    parts.push(if cot { COT_DIRECTIVE } else { ANSWER_ONLY });
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// How a prompt is laid out as chat messages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLayout {
    /// Everything in a single user message.
    #[default]
    Flat,
    /// Instruction as the system message, each demonstration as a
    /// user/assistant exchange, then the query as the final user message.
    ChatTurns,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrder {
    /// Best-ranked demonstration first.
    #[default]
    Admission,
    /// Best-ranked demonstration last, closest to the query.
    Reversed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub cot: bool,
    pub demo_order: DemoOrder,
    /// Maximum length of the flat prompt in characters.
    pub char_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub instruction: String,
    pub demo_blocks: Vec<String>,
    pub demo_labels: Vec<Ideology>,
    pub query_block: String,
    pub cot: bool,
}

impl RenderedPrompt {
    /// The flat prompt: instruction, demonstration blocks, and query block
    /// separated by single blank lines.
    pub fn to_text(&self) -> String {
        let mut out = self.instruction.clone();
        for block in self.demo_blocks.iter().chain(std::iter::once(&self.query_block)) {
            out.push_str("\n\n");
            out.push_str(block);
        }
        out
    }

    pub fn char_len(&self) -> usize {
        self.to_text().chars().count()
    }

    pub fn messages(&self, layout: PromptLayout) -> Vec<ChatMessage> {
        match layout {
            PromptLayout::Flat => vec![ChatMessage::new("user", self.to_text())],
            PromptLayout::ChatTurns => {
                let mut msgs = vec![ChatMessage::new("system", self.instruction.clone())];
                for (block, label) in self.demo_blocks.iter().zip(&self.demo_labels) {
                    let body = block.rsplit_once('\n').map_or("", |(body, _)| body);
                    msgs.push(ChatMessage::new("user", body));
                    msgs.push(ChatMessage::new("assistant", label.as_word()));
                }
                msgs.push(ChatMessage::new("user", self.query_block.clone()));
                msgs
            }
        }
    }
}

fn block_lines(item: &ContentItem, config: &FieldConfig, desc_cap: Option<usize>) -> Vec<String> {
    config
        .present_fields(item)
        .into_iter()
        .filter_map(|(name, value)| {
            let value: String = match (name, desc_cap) {
                ("Description", Some(cap)) => value.chars().take(cap).collect(),
                _ => value.to_string(),
            };
            (!value.is_empty()).then(|| format!("{name}: {value}"))
        })
        .collect()
}

fn render_capped(
    item: &ContentItem,
    demos: &DemonstrationSet,
    demo_items: &HashMap<String, ContentItem>,
    config: &FieldConfig,
    opts: &RenderOptions,
    desc_cap: Option<usize>,
) -> Result<RenderedPrompt> {
    config.validate()?;
    let query_lines = block_lines(item, config, desc_cap);
    if query_lines.is_empty() {
        return Err(Error::invalid(format!(
            "query {:?} has none of the configured fields ({config})",
            item.id
        )));
    }

    let mut members: Vec<_> = demos.members.iter().collect();
    if opts.demo_order == DemoOrder::Reversed {
        members.reverse();
    }
    let mut demo_blocks = Vec::with_capacity(members.len());
    let mut demo_labels = Vec::with_capacity(members.len());
    for member in members {
        let demo = demo_items
            .get(&member.id)
            .ok_or_else(|| Error::invalid(format!("demonstration {:?} not found", member.id)))?;
        let label = demo
            .label
            .ok_or_else(|| Error::invalid(format!("demonstration {:?} has no gold label", demo.id)))?;
        let mut lines = block_lines(demo, config, desc_cap);
        lines.push(format!("Ideology: {label}"));
        demo_blocks.push(lines.join("\n"));
        demo_labels.push(label);
    }

    Ok(RenderedPrompt {
        instruction: instruction_for(config, opts.cot),
        demo_blocks,
        demo_labels,
        query_block: query_lines.join("\n"),
        cot: opts.cot,
    })
}

/// Renders the prompt for `item` with the given demonstrations.
pub fn render(
    item: &ContentItem,
    demos: &DemonstrationSet,
    demo_items: &HashMap<String, ContentItem>,
    config: &FieldConfig,
    cot: bool,
) -> Result<RenderedPrompt> {
    let opts = RenderOptions {
        cot,
        ..RenderOptions::default()
    };
    render_with(item, demos, demo_items, config, &opts)
}

/// Renders with explicit options. When a character budget is set and the
/// prompt is over it, description fields are shortened (all to the same
/// maximum length, possibly dropped entirely); if that is not enough the
/// render fails with [`Error::PromptTooLong`].
pub fn render_with(
    item: &ContentItem,
    demos: &DemonstrationSet,
    demo_items: &HashMap<String, ContentItem>,
    config: &FieldConfig,
    opts: &RenderOptions,
) -> Result<RenderedPrompt> {
    let full = render_capped(item, demos, demo_items, config, opts, None)?;
    let Some(budget) = opts.char_budget else {
        return Ok(full);
    };
    let needed = full.char_len();
    if needed <= budget {
        return Ok(full);
    }
    if !config.include_description {
        return Err(Error::PromptTooLong { needed, budget });
    }

    let longest = std::iter::once(item)
        .chain(demos.members.iter().filter_map(|m| demo_items.get(&m.id)))
        .filter_map(|i| i.description.as_ref())
        .map(|d| d.chars().count())
        .max()
        .unwrap_or(0);

    let shortest = render_capped(item, demos, demo_items, config, opts, Some(0))?;
    if shortest.char_len() > budget {
        return Err(Error::PromptTooLong {
            needed: shortest.char_len(),
            budget,
        });
    }
    // Largest cap that still fits; length is monotone in the cap.
    let (mut lo, mut hi) = (0usize, longest);
    let mut best = shortest;
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        let candidate = render_capped(item, demos, demo_items, config, opts, Some(mid))?;
        if candidate.char_len() <= budget {
            lo = mid;
            best = candidate;
        } else {
            hi = mid - 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::DemoMember;

    fn demo_set(ids: &[&str]) -> DemonstrationSet {
        DemonstrationSet {
            query_id: "q".into(),
            members: ids
                .iter()
                .enumerate()
                .map(|(i, id)| DemoMember {
                    id: id.to_string(),
                    label: Ideology::Neutral,
                    rank: i + 1,
                })
                .collect(),
            k_requested: ids.len(),
            fallback_used: false,
        }
    }

    fn pool_items() -> HashMap<String, ContentItem> {
        [
            ContentItem::new("d1", "Tax cuts pass the Senate")
                .with_source("Fox News")
                .with_description("A long description of the vote.")
                .with_label(Ideology::Liberal),
            ContentItem::new("d2", "Border wall funding debated")
                .with_source("CNN")
                .with_label(Ideology::Conservative),
        ]
        .into_iter()
        .map(|i| (i.id.clone(), i))
        .collect()
    }

    #[test]
    fn title_only_instruction_is_exact() {
        assert_eq!(
            instruction_for(&FieldConfig::TITLE, false),
            "Classify the following news article titles as ideologically liberal, neutral, or conservative. Titles with no ideological content are classified as neutral. Only respond with the final answer."
        );
    }

    #[test]
    fn field_sentences_are_inserted_in_order() {
        let both = instruction_for(&FieldConfig::TITLE_SOURCE_DESCRIPTION, false);
        let s = both.find(SOURCE_SENTENCE).unwrap();
        let d = both.find(DESCRIPTION_SENTENCE).unwrap();
        assert!(s < d);
        assert!(both.ends_with(ANSWER_ONLY));
        assert!(instruction_for(&FieldConfig::TITLE_SOURCE, false).contains(SOURCE_SENTENCE));
        assert!(!instruction_for(&FieldConfig::TITLE_SOURCE, false).contains(DESCRIPTION_SENTENCE));
    }

    #[test]
    fn cot_replaces_answer_only() {
        let cot = instruction_for(&FieldConfig::TITLE, true);
        assert!(cot.contains("Answer:"));
        assert!(cot.contains("step-by-step"));
        assert!(!cot.contains(ANSWER_ONLY));
    }

    #[test]
    fn zero_shot_has_only_instruction_and_query() {
        let query = ContentItem::new("q", "Senate votes").with_label(Ideology::Liberal);
        let p = render(&query, &demo_set(&[]), &pool_items(), &FieldConfig::TITLE, false).unwrap();
        assert_eq!(p.to_text(), format!("{}\n\nTitle: Senate votes", instruction_for(&FieldConfig::TITLE, false)));
    }

    #[test]
    fn demo_blocks_end_with_their_labels() {
        let query = ContentItem::new("q", "Senate votes").with_source("NPR");
        let p = render(&query, &demo_set(&["d1", "d2"]), &pool_items(), &FieldConfig::TITLE_SOURCE, false).unwrap();
        assert_eq!(p.demo_blocks.len(), 2);
        assert!(p.demo_blocks[0].ends_with("Ideology: Liberal"));
        assert!(p.demo_blocks[1].ends_with("Ideology: Conservative"));
        assert_eq!(p.query_block, "Title: Senate votes\nSource: NPR");
    }

    #[test]
    fn missing_demo_field_is_omitted_not_blank() {
        let query = ContentItem::new("q", "x").with_description("about x");
        let p = render(&query, &demo_set(&["d2"]), &pool_items(), &FieldConfig::TITLE_DESCRIPTION, false).unwrap();
        assert_eq!(p.demo_blocks[0], "Title: Border wall funding debated\nIdeology: Conservative");
    }

    #[test]
    fn query_without_configured_fields_errors() {
        let cfg = FieldConfig::new(false, true, false);
        let query = ContentItem::new("q", "x");
        assert!(render(&query, &demo_set(&[]), &pool_items(), &cfg, false).is_err());
    }

    #[test]
    fn unresolvable_demo_errors() {
        let query = ContentItem::new("q", "x");
        assert!(render(&query, &demo_set(&["nope"]), &pool_items(), &FieldConfig::TITLE, false).is_err());
    }

    #[test]
    fn chat_turn_layout_splits_labels_into_assistant_turns() {
        let query = ContentItem::new("q", "Senate votes");
        let p = render(&query, &demo_set(&["d1"]), &pool_items(), &FieldConfig::TITLE, false).unwrap();
        let msgs = p.messages(PromptLayout::ChatTurns);
        let roles: Vec<_> = msgs.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(msgs[1].content, "Title: Tax cuts pass the Senate");
        assert_eq!(msgs[2].content, "liberal");
    }

    #[test]
    fn budget_truncates_descriptions_then_errors() {
        let query = ContentItem::new("q", "Senate votes").with_description("d".repeat(200));
        let items = pool_items();
        let demos = demo_set(&["d1"]);
        let cfg = FieldConfig::TITLE_DESCRIPTION;
        let full = render(&query, &demos, &items, &cfg, false).unwrap().char_len();
        let opts = RenderOptions {
            char_budget: Some(full - 50),
            ..Default::default()
        };
        let p = render_with(&query, &demos, &items, &cfg, &opts).unwrap();
        assert!(p.char_len() <= full - 50);
        assert!(p.char_len() >= full - 60);
        assert!(p.query_block.starts_with("Title: Senate votes\nDescription: ddd"));

        let opts = RenderOptions {
            char_budget: Some(50),
            ..Default::default()
        };
        assert!(matches!(
            render_with(&query, &demos, &items, &cfg, &opts),
            Err(Error::PromptTooLong { .. })
        ));
    }

    #[test]
    fn field_config_parsing_and_hash() {
        assert_eq!("title-source-desc".parse::<FieldConfig>().unwrap(), FieldConfig::TITLE_SOURCE_DESCRIPTION);
        assert_eq!("title".parse::<FieldConfig>().unwrap(), FieldConfig::TITLE);
        assert!("bogus".parse::<FieldConfig>().is_err());
        let hashes: std::collections::HashSet<_> = FieldConfig::ABLATION_GRID.iter().map(|c| c.fields_hash()).collect();
        assert_eq!(hashes.len(), 4);
        for cfg in FieldConfig::ABLATION_GRID {
            assert_eq!(cfg.to_string().parse::<FieldConfig>().unwrap(), cfg);
        }
    }
}
