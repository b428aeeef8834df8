//! Chat model gateway: request dispatch with retries, response parsing, and
//! per-query prediction records.

mod http;
mod mock;
mod parse;

use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use http::HttpChatModel;
pub use mock::{demo_labels, MockKind, MockLlm};
pub use parse::{parse_label, ParsedLabel};

use crate::corpus::Ideology;
use crate::error::{Error, Result};
use crate::parallel::bounded_map;
use crate::prompting::{ChatMessage, PromptLayout, RenderedPrompt};

/// Appended to the final user message when the first answer names more
/// than one label.
pub const CLARIFY_SUFFIX: &str = "Respond with exactly one word: liberal, neutral, or conservative.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub query_id: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    RateLimited { retry_after: Option<Duration> },
    Status { code: u16, body: String },
    Network(String),
    /// The provider answered but the body could not be understood.
    Protocol(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::RateLimited { .. } | TransportError::Network(_) => true,
            TransportError::Status { code, .. } => *code == 408 || *code >= 500,
            TransportError::Protocol(_) => false,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::RateLimited { .. } => write!(f, "rate limited (HTTP 429)"),
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Network(m) => write!(f, "network error: {m}"),
            TransportError::Protocol(m) => write!(f, "protocol error: {m}"),
        }
    }
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Backoff before the first retry; doubles on each further retry.
    pub backoff_base_ms: u64,
    pub base_url: String,
    pub layout: PromptLayout,
    /// Read from the environment, never serialized.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            model_name: "mistral-7b-instruct".into(),
            temperature: 0.0,
            max_retries: 3,
            max_in_flight: 4,
            backoff_base_ms: 1000,
            base_url: "http://localhost:8000".into(),
            layout: PromptLayout::Flat,
            api_key: None,
        }
    }
}

impl LlmConfig {
    /// Fills the API key from `LLM_API_KEY` and lets `LLM_BASE_URL`
    /// override the base URL.
    pub fn with_env(mut self) -> Self {
        if let Ok(key) = std::env::var("LLM_API_KEY") {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        if let Ok(url) = std::env::var("LLM_BASE_URL") {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::invalid(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Ambiguous,
    Empty,
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub gold: Option<Ideology>,
    pub pred: Option<Ideology>,
    pub raw_response: String,
    pub parse_status: ParseStatus,
    /// Requests sent, counting retries and the clarification reprompt.
    pub attempts: u32,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.gold.is_some() && self.pred == self.gold
    }
}

/// One query ready to send.
#[derive(Debug, Clone)]
pub struct ClassifyJob {
    pub query_id: String,
    pub gold: Option<Ideology>,
    pub prompt: RenderedPrompt,
}

fn backoff_delay(cfg: &LlmConfig, retry: u32) -> Duration {
    let base = cfg.backoff_base_ms.saturating_mul(1u64 << retry.min(16));
    // Up to 25% jitter so parallel workers do not retry in lockstep.
    let jitter = if base > 0 { rand::rng().random_range(0..=base / 4) } else { 0 };
    Duration::from_millis(base + jitter)
}

fn send_with_retries(
    model: &dyn ChatModel,
    request: &ChatRequest,
    cfg: &LlmConfig,
    attempts: &mut u32,
) -> std::result::Result<String, TransportError> {
    let mut retry = 0;
    loop {
        *attempts += 1;
        match model.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_retryable() && retry < cfg.max_retries => {
                let mut wait = backoff_delay(cfg, retry);
                if let TransportError::RateLimited { retry_after: Some(ra) } = &e {
                    wait = wait.max(*ra);
                }
                log::warn!("query {:?}: {e}; retrying in {wait:?}", request.query_id);
                std::thread::sleep(wait);
                retry += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Sends one prompt and parses the answer. Never fails: transport and parse
/// problems are reported through the record's status.
pub fn classify(model: &dyn ChatModel, job: &ClassifyJob, cfg: &LlmConfig, config_hash: &str) -> PredictionRecord {
    let mut request = ChatRequest {
        query_id: job.query_id.clone(),
        messages: job.prompt.messages(cfg.layout),
    };
    let mut attempts = 0;
    let mut record = PredictionRecord {
        query_id: job.query_id.clone(),
        gold: job.gold,
        pred: None,
        raw_response: String::new(),
        parse_status: ParseStatus::Empty,
        attempts: 0,
        config_hash: config_hash.to_string(),
        error: None,
    };

    let mut reprompted = false;
    loop {
        match send_with_retries(model, &request, cfg, &mut attempts) {
            Err(e) => {
                record.parse_status = ParseStatus::TransportError;
                record.error = Some(e.to_string());
                break;
            }
            Ok(text) => {
                let parsed = parse_label(&text);
                record.raw_response = text;
                match parsed {
                    ParsedLabel::Label(l) => {
                        record.pred = Some(l);
                        record.parse_status = ParseStatus::Ok;
                    }
                    ParsedLabel::Empty => record.parse_status = ParseStatus::Empty,
                    ParsedLabel::Ambiguous if !reprompted => {
                        reprompted = true;
                        let last = request.messages.last_mut().expect("prompts have a user message");
                        last.content.push_str("\n\n");
                        last.content.push_str(CLARIFY_SUFFIX);
                        continue;
                    }
                    ParsedLabel::Ambiguous => record.parse_status = ParseStatus::Ambiguous,
                }
                break;
            }
        }
    }
    record.attempts = attempts;
    record
}

/// Classifies all jobs with bounded concurrency. Records come back sorted by
/// query id.
pub fn classify_batch(
    model: &dyn ChatModel,
    jobs: &[ClassifyJob],
    cfg: &LlmConfig,
    config_hash: &str,
) -> Vec<PredictionRecord> {
    let mut out = bounded_map(jobs, cfg.max_in_flight, |job| classify(model, job, cfg, config_hash));
    out.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::Mutex;

    struct Sequence {
        replies: Mutex<VecDeque<std::result::Result<String, TransportError>>>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl Sequence {
        fn new(replies: Vec<std::result::Result<String, TransportError>>) -> Self {
            Sequence {
                replies: Mutex::new(replies.into()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatModel for Sequence {
        fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
            self.seen.lock().unwrap().push(request.clone());
            self.replies.lock().unwrap().pop_front().expect("no reply scripted")
        }
    }

    fn job(id: &str) -> ClassifyJob {
        ClassifyJob {
            query_id: id.into(),
            gold: Some(Ideology::Liberal),
            prompt: RenderedPrompt {
                instruction: "Instruction".into(),
                demo_blocks: vec![],
                demo_labels: vec![],
                query_block: "Title: t".into(),
                cot: false,
            },
        }
    }

    fn fast() -> LlmConfig {
        LlmConfig {
            backoff_base_ms: 1,
            ..LlmConfig::default()
        }
    }

    #[test]
    fn clean_answer() {
        let m = Sequence::new(vec![Ok("Liberal".into())]);
        let r = classify(&m, &job("a"), &fast(), "h");
        assert_eq!(r.pred, Some(Ideology::Liberal));
        assert_eq!(r.parse_status, ParseStatus::Ok);
        assert_eq!(r.attempts, 1);
        assert!(r.is_correct());
    }

    #[test]
    fn ambiguous_gets_one_reprompt() {
        let m = Sequence::new(vec![Ok("liberal or conservative".into()), Ok("Conservative".into())]);
        let r = classify(&m, &job("a"), &fast(), "h");
        assert_eq!(r.pred, Some(Ideology::Conservative));
        assert_eq!(r.attempts, 2);
        let seen = m.seen.lock().unwrap();
        assert!(seen[1].messages.last().unwrap().content.ends_with(CLARIFY_SUFFIX));

        let m = Sequence::new(vec![Ok("liberal or conservative".into()), Ok("neutral, liberal".into())]);
        let r = classify(&m, &job("a"), &fast(), "h");
        assert_eq!(r.parse_status, ParseStatus::Ambiguous);
        assert_eq!(r.pred, None);
    }

    #[test]
    fn empty_is_not_retried() {
        let m = Sequence::new(vec![Ok("I cannot answer that.".into())]);
        let r = classify(&m, &job("a"), &fast(), "h");
        assert_eq!(r.parse_status, ParseStatus::Empty);
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let m = Sequence::new(vec![
            Err(TransportError::RateLimited { retry_after: None }),
            Err(TransportError::Status { code: 503, body: String::new() }),
            Ok("neutral".into()),
        ]);
        let r = classify(&m, &job("a"), &fast(), "h");
        assert_eq!(r.pred, Some(Ideology::Neutral));
        assert_eq!(r.attempts, 3);
    }

    #[test]
    fn exhausted_retries_record_transport_error() {
        let cfg = LlmConfig {
            max_retries: 2,
            ..fast()
        };
        let m = Sequence::new((0..3).map(|_| Err(TransportError::Network("refused".into()))).collect());
        let r = classify(&m, &job("a"), &cfg, "h");
        assert_eq!(r.parse_status, ParseStatus::TransportError);
        assert_eq!(r.attempts, 3);
        assert!(r.error.unwrap().contains("refused"));

        let m = Sequence::new(vec![Err(TransportError::Status { code: 401, body: "no key".into() })]);
        let r = classify(&m, &job("a"), &cfg, "h");
        assert_eq!(r.parse_status, ParseStatus::TransportError);
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn batch_sorted_by_query_id() {
        let jobs: Vec<_> = ["c", "a", "b"].iter().map(|id| job(id)).collect();
        let m = MockLlm::new(MockKind::Fixed(Ideology::Conservative));
        let out = classify_batch(&m, &jobs, &fast(), "h");
        assert_eq!(out.iter().map(|r| r.query_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(out.iter().all(|r| r.config_hash == "h"));
    }

    #[test]
    fn record_serializes_status_snake_case() {
        let m = Sequence::new(vec![Err(TransportError::Protocol("x".into()))]);
        let r = classify(&m, &job("a"), &fast(), "h");
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["parse_status"], "transport_error");
        assert_eq!(v["gold"], "liberal");
    }
}
