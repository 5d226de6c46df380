//! Chat-completions client with a swappable transport.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{PromptBundle, Stage};
use super::PlannerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    /// Extra attempts after a 429, a 5xx or a timeout.
    #[serde(default)]
    pub retries: u32,
}

impl LlmEndpointConfig {
    pub fn from_json(text: &str) -> Result<Self, PlannerError> {
        let c: Self = serde_json::from_str(text).map_err(|e| PlannerError::Config(e.to_string()))?;
        if c.timeout_secs.is_nan() || c.timeout_secs <= 0.0 {
            return Err(PlannerError::Config("timeout_secs must be positive".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PlannerError> {
        let text = fs::read_to_string(path).map_err(|e| PlannerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub url: String,
    pub token: String,
    pub body: Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Other(String),
}

pub trait Transport: Send + Sync {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP over reqwest.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(req.timeout)
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let resp = client
            .post(&req.url)
            .bearer_auth(&req.token)
            .json(&req.body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Other(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Replies from a queue and records every request. An empty queue answers
/// 503.
#[derive(Debug, Default)]
pub struct FakeTransport {
    replies: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
    pub requests: Mutex<Vec<HttpRequest>>,
}

impl FakeTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a successful completion whose message content is `text`.
    pub fn reply(self, text: &str) -> Self {
        let body = json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
        });
        self.raw(200, &body.to_string())
    }

    pub fn raw(self, status: u16, body: &str) -> Self {
        self.replies.lock().push_back(Ok(HttpResponse {
            status,
            body: body.to_string(),
        }));
        self
    }

    pub fn timeout(self) -> Self {
        self.replies.lock().push_back(Err(TransportError::Timeout));
        self
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().len()
    }
}

impl Transport for FakeTransport {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.requests.lock().push(req.clone());
        self.replies.lock().pop_front().unwrap_or(Ok(HttpResponse {
            status: 503,
            body: "no reply queued".into(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub stage: Stage,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_seconds: f64,
    /// 1 = first request, 2 = after feedback.
    pub attempt: u8,
    /// Token counts are whitespace estimates, not provider figures.
    pub estimated: bool,
}

impl UsageRecord {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// TU and GT over a set of records.
pub fn totals(records: &[UsageRecord]) -> (u64, f64) {
    (
        records.iter().map(UsageRecord::tokens).sum(),
        records.iter().fold(0.0, |acc, r| acc + r.wall_seconds),
    )
}

/// Sends `bundle` and returns the model text with its usage. The token is
/// read from `config.auth_env` before anything goes on the wire.
pub fn request(
    config: &LlmEndpointConfig,
    bundle: &PromptBundle,
    transport: &dyn Transport,
) -> Result<(String, UsageRecord), PlannerError> {
    let token = std::env::var(&config.auth_env)
        .ok()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| PlannerError::AuthMissing(config.auth_env.clone()))?;
    let req = HttpRequest {
        url: config.endpoint(),
        token,
        body: json!({
            "model": config.model,
            "max_tokens": config.max_tokens,
            "messages": bundle.messages(),
        }),
        timeout: Duration::from_secs_f64(config.timeout_secs),
    };

    let started = Instant::now();
    let mut last = PlannerError::Timeout;
    for _ in 0..=config.retries {
        match transport.post(&req) {
            Err(TransportError::Timeout) => last = PlannerError::Timeout,
            Err(TransportError::Other(e)) => return Err(PlannerError::Transport(e)),
            Ok(resp) if resp.status == 429 || resp.status >= 500 => last = PlannerError::HttpError(resp.status),
            Ok(resp) if !(200..300).contains(&resp.status) => return Err(PlannerError::HttpError(resp.status)),
            Ok(resp) => {
                let wall_seconds = started.elapsed().as_secs_f64();
                return parse_completion(&resp.body, bundle, wall_seconds);
            }
        }
    }
    Err(last)
}

fn parse_completion(body: &str, bundle: &PromptBundle, wall_seconds: f64) -> Result<(String, UsageRecord), PlannerError> {
    let v: Value = serde_json::from_str(body).map_err(|e| PlannerError::MalformedResponse(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| PlannerError::MalformedResponse("no choices[0].message.content".into()))?
        .to_string();
    let reported = (
        v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    );
    let (prompt_tokens, completion_tokens, estimated) = match reported {
        (Some(p), Some(c)) => (p, c, false),
        _ => (bundle.word_count(), text.split_whitespace().count() as u64, true),
    };
    Ok((
        text,
        UsageRecord {
            stage: bundle.stage,
            prompt_tokens,
            completion_tokens,
            wall_seconds,
            attempt: bundle.attempt,
            estimated,
        },
    ))
}

/// Body of the first fenced code block, without its info string.
pub fn extract_fenced(text: &str) -> Option<String> {
    let mut lines = text.lines();
    lines.find(|l| l.trim_start().starts_with("```"))?;
    let mut body = Vec::new();
    for l in lines {
        if l.trim_start().starts_with("```") {
            let mut out = body.join("\n");
            out.push('\n');
            return Some(out);
        }
        body.push(l);
    }
    None
}

/// One request/response pair, saved for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub bundle: PromptBundle,
    pub raw: String,
    pub usage: UsageRecord,
}

impl Transcript {
    /// Fake transport answering with each transcript's raw text in turn.
    pub fn replay(transcripts: &[Transcript]) -> FakeTransport {
        transcripts.iter().fold(FakeTransport::new(), |t, tr| t.reply(&tr.raw))
    }
}
