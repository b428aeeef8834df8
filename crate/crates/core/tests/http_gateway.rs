use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use ideoshot::config::RunConfig;
use ideoshot::corpus::Ideology;
use ideoshot::llm::{classify, ChatModel, ChatRequest, ClassifyJob, HttpChatModel, LlmConfig, ParseStatus};
use ideoshot::prompting::{ChatMessage, RenderedPrompt};

struct Captured {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Chat completions stub on an ephemeral port. `reply` maps the request
/// index to a status line, extra headers and body.
struct Stub {
    base_url: String,
    hits: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Captured>>>,
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn serve<F>(reply: F) -> Stub
where
    F: Fn(usize, &serde_json::Value) -> (u16, Vec<(&'static str, String)>, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (h, s) = (hits.clone(), seen.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let n = h.fetch_add(1, Ordering::SeqCst);
            let (status, extra, text) = reply(n, &body);
            s.lock().unwrap().push(Captured { headers, body });
            let mut resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                text.len()
            );
            for (k, v) in extra {
                resp.push_str(&format!("{k}: {v}\r\n"));
            }
            resp.push_str("\r\n");
            resp.push_str(&text);
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    Stub { base_url, hits, seen }
}

fn llm_config(base_url: &str) -> LlmConfig {
    LlmConfig {
        base_url: base_url.into(),
        backoff_base_ms: 1,
        max_retries: 2,
        api_key: Some("secret".into()),
        ..LlmConfig::default()
    }
}

fn job() -> ClassifyJob {
    ClassifyJob {
        query_id: "q1".into(),
        gold: Some(Ideology::Conservative),
        prompt: RenderedPrompt {
            instruction: "Classify the item.".into(),
            demo_blocks: vec![],
            demo_labels: vec![],
            query_block: "Title: Tax cuts pass".into(),
            cot: false,
        },
    }
}

#[test]
fn rate_limit_then_success() {
    let stub = serve(|n, _| match n {
        0 => (429, vec![("Retry-After", "0".into())], "{}".into()),
        _ => (200, vec![], completion("Answer: Conservative")),
    });
    let cfg = llm_config(&stub.base_url);
    let model = HttpChatModel::new(&cfg);
    let rec = classify(&model, &job(), &cfg, "h");
    assert_eq!(rec.parse_status, ParseStatus::Ok);
    assert_eq!(rec.pred, Some(Ideology::Conservative));
    assert_eq!(rec.attempts, 2);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);

    let seen = stub.seen.lock().unwrap();
    let req = &seen[1];
    assert!(req.headers[0].starts_with("POST /v1/chat/completions"));
    assert!(req.headers.iter().any(|h| h == "authorization: Bearer secret" || h == "Authorization: Bearer secret"));
    assert_eq!(req.body["model"], "mistral-7b-instruct");
    assert_eq!(req.body["temperature"], 0.0);
    let messages: Vec<ChatMessage> = serde_json::from_value(req.body["messages"].clone()).unwrap();
    assert!(messages.last().unwrap().content.contains("Title: Tax cuts pass"));
}

#[test]
fn server_errors_exhaust_retries() {
    let stub = serve(|_, _| (503, vec![], "overloaded".into()));
    let cfg = llm_config(&stub.base_url);
    let rec = classify(&HttpChatModel::new(&cfg), &job(), &cfg, "h");
    assert_eq!(rec.parse_status, ParseStatus::TransportError);
    assert_eq!(rec.pred, None);
    assert_eq!(rec.attempts, 3);
    assert!(rec.error.unwrap().contains("503"));
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(|_, _| (400, vec![], "bad request".into()));
    let cfg = llm_config(&stub.base_url);
    let err = HttpChatModel::new(&cfg)
        .complete(&ChatRequest {
            query_id: "q".into(),
            messages: vec![],
        })
        .unwrap_err();
    assert!(!err.is_retryable());
    let rec = classify(&HttpChatModel::new(&cfg), &job(), &cfg, "h");
    assert_eq!(rec.attempts, 1);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn ambiguous_answer_gets_one_reprompt() {
    let stub = serve(|n, _| match n {
        0 => (200, vec![], completion("Maybe liberal, maybe conservative.")),
        _ => (200, vec![], completion("liberal")),
    });
    let cfg = llm_config(&stub.base_url);
    let rec = classify(&HttpChatModel::new(&cfg), &job(), &cfg, "h");
    assert_eq!(rec.pred, Some(Ideology::Liberal));
    assert_eq!(rec.attempts, 2);
    let seen = stub.seen.lock().unwrap();
    let last = seen[1].body["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap().to_string();
    assert!(last.ends_with("Respond with exactly one word: liberal, neutral, or conservative."));
}

#[test]
fn cli_classify_against_endpoint() {
    // Answers with the label that appears most among the demonstrations.
    let stub = serve(|_, body| {
        let text = body["messages"].to_string().to_lowercase();
        let label = ["liberal", "neutral", "conservative"]
            .into_iter()
            .max_by_key(|l| text.matches(&format!("ideology: {l}")).count())
            .unwrap();
        (200, vec![], completion(&format!("Answer: {label}")))
    });
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    let out = dir.path().join("out");
    ideoshot::cli::run(["ideoshot", "synth", "--out", syn.to_str().unwrap(), "--n-train", "60", "--n-test", "12"]).unwrap();

    let mut cfg = RunConfig::load(syn.join("config.toml")).unwrap();
    cfg.mock = None;
    cfg.llm.base_url = stub.base_url.clone();
    cfg.llm.backoff_base_ms = 1;
    let config = dir.path().join("http.toml");
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();

    let args = |cmd: &'static str| {
        vec![
            "ideoshot".to_string(),
            cmd.into(),
            "--config".into(),
            config.to_str().unwrap().into(),
            "--k".into(),
            "3".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    ideoshot::cli::run(args("classify")).unwrap();
    ideoshot::cli::run(args("eval")).unwrap();

    assert_eq!(stub.hits.load(Ordering::SeqCst), 12);
    let preds = std::fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 12);
    for line in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["parse_status"], "ok");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 12);
    assert_eq!(report["parse_failure_count"], 0);
    assert_eq!(report["descriptor"]["model"], "mistral-7b-instruct");
}

#[test]
fn cli_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let err = ideoshot::cli::run(["ideoshot", "ingest", "--dataset", missing.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("nope.jsonl"), "{err}");
    assert!(ideoshot::cli::run(["ideoshot", "classify", "--k", "-1"]).is_err());
    assert!(ideoshot::cli::run(["ideoshot", "frobnicate"]).is_err());
}
