use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatModel, ChatRequest, LlmConfig, TransportError};
use crate::prompting::ChatMessage;

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for an OpenAI-compatible chat completions endpoint.
pub struct HttpChatModel {
    url: String,
    model_name: String,
    temperature: f64,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatModel {
    pub fn new(cfg: &LlmConfig) -> Self {
        let base = cfg.base_url.trim_end_matches('/');
        let url = if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatModel {
            url,
            model_name: cfg.model_name.clone(),
            temperature: cfg.temperature,
            api_key: cfg.api_key.clone(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn retry_after(value: Option<&ureq::http::HeaderValue>) -> Option<Duration> {
    let secs: f64 = value?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

impl ChatModel for HttpChatModel {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req
            .send_json(CompletionRequest {
                model: &self.model_name,
                messages: &request.messages,
                temperature: self.temperature,
            })
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(TransportError::RateLimited {
                retry_after: retry_after(resp.headers().get("retry-after")),
            });
        }
        if status >= 400 {
            let body = resp.into_body().read_to_string().unwrap_or_default();
            let body: String = body.chars().take(200).collect();
            return Err(TransportError::Status { code: status, body });
        }
        let parsed: CompletionResponse = resp
            .into_body()
            .read_json()
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::Protocol("response has no choices".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_path() {
        let mut cfg = LlmConfig {
            base_url: "http://h:1/".into(),
            ..LlmConfig::default()
        };
        assert_eq!(HttpChatModel::new(&cfg).url(), "http://h:1/v1/chat/completions");
        cfg.base_url = "http://h:1/v1".into();
        assert_eq!(HttpChatModel::new(&cfg).url(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn unreachable_host_is_retryable() {
        let cfg = LlmConfig {
            base_url: "http://127.0.0.1:1".into(),
            ..LlmConfig::default()
        };
        let req = ChatRequest {
            query_id: "q".into(),
            messages: vec![ChatMessage::new("user", "hi")],
        };
        let err = HttpChatModel::new(&cfg).complete(&req).unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}
