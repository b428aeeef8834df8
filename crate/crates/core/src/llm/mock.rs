use std::collections::HashMap;
use std::str::FromStr;

use super::{ChatModel, ChatRequest, TransportError};
use crate::corpus::Ideology;
use crate::error::{Error, Result};

/// Deterministic stand-ins for a real model, for offline runs and tests.
#[derive(Debug, Clone, PartialEq)]
pub enum MockKind {
    /// Majority gold label among the demonstrations; ties answer neutral.
    EchoMajority,
    /// Label of the first demonstration block.
    NearestDemo,
    Fixed(Ideology),
    /// Canned response per query id; unknown ids get an empty response.
    Scripted(HashMap<String, String>),
}

impl FromStr for MockKind {
    type Err = Error;

    /// Accepts `echo_majority`, `nearest_demo`, `fixed:<label>`, or
    /// `scripted:<path to JSON object of id -> response>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(label) = s.strip_prefix("fixed:") {
            return Ok(MockKind::Fixed(label.parse()?));
        }
        if let Some(path) = s.strip_prefix("scripted:") {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {path}"), e))?;
            return Ok(MockKind::Scripted(serde_json::from_str(&text)?));
        }
        match s.replace('-', "_").as_str() {
            "echo_majority" => Ok(MockKind::EchoMajority),
            "nearest_demo" => Ok(MockKind::NearestDemo),
            other => Err(Error::invalid(format!("unknown mock {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockLlm {
    pub kind: MockKind,
}

impl MockLlm {
    pub fn new(kind: MockKind) -> Self {
        MockLlm { kind }
    }
}

/// Gold labels of the demonstrations, in prompt order. Chat-turn prompts
/// carry them as assistant turns; flat prompts as `Ideology:` lines.
pub fn demo_labels(request: &ChatRequest) -> Vec<Ideology> {
    let assistant: Vec<Ideology> = request
        .messages
        .iter()
        .filter(|m| m.role == "assistant")
        .filter_map(|m| m.content.parse().ok())
        .collect();
    if !assistant.is_empty() {
        return assistant;
    }
    request
        .messages
        .iter()
        .filter(|m| m.role == "user")
        .flat_map(|m| m.content.lines())
        .filter_map(|line| line.strip_prefix("Ideology: "))
        .filter_map(|l| l.parse().ok())
        .collect()
}

impl ChatModel for MockLlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        Ok(match &self.kind {
            MockKind::EchoMajority => {
                let mut counts = [0usize; 3];
                for l in demo_labels(request) {
                    counts[l.index()] += 1;
                }
                let max = *counts.iter().max().unwrap();
                let winners: Vec<_> = Ideology::ALL.iter().filter(|l| counts[l.index()] == max).collect();
                match winners.as_slice() {
                    [only] => only.as_word().to_string(),
                    _ => Ideology::Neutral.as_word().to_string(),
                }
            }
            MockKind::NearestDemo => demo_labels(request)
                .first()
                .map_or_else(String::new, |l| l.as_word().to_string()),
            MockKind::Fixed(l) => l.as_word().to_string(),
            MockKind::Scripted(map) => map.get(&request.query_id).cloned().unwrap_or_default(),
        })
    }
}
