use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::parse_reported_confidence;

/// What a query asks for; mock scripts are keyed on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Aspect,
    Opinion,
    Polarity,
    Feedback,
    ChoiceAspect,
    ChoiceOpinion,
}

impl QueryKind {
    pub const ALL: [QueryKind; 6] = [
        QueryKind::Aspect,
        QueryKind::Opinion,
        QueryKind::Polarity,
        QueryKind::Feedback,
        QueryKind::ChoiceAspect,
        QueryKind::ChoiceOpinion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Aspect => "aspect",
            QueryKind::Opinion => "opinion",
            QueryKind::Polarity => "polarity",
            QueryKind::Feedback => "feedback",
            QueryKind::ChoiceAspect => "choice_aspect",
            QueryKind::ChoiceOpinion => "choice_opinion",
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One chat-completion call.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub instance_id: String,
    pub kind: QueryKind,
    /// 0-based refinement epoch.
    pub epoch: u32,
    pub prompt: String,
    pub logprobs: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<(String, f64)>>,
    pub reported_confidence: Option<f64>,
}

impl BackendResponse {
    /// Builds a response, parsing any `Confidence:` line out of the text.
    pub fn new(text: impl Into<String>, token_logprobs: Option<Vec<(String, f64)>>) -> Self {
        let text = text.into();
        let reported_confidence = parse_reported_confidence(&text);
        BackendResponse {
            text,
            token_logprobs,
            reported_confidence,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("mock script has no reply for ({id}, {kind}, epoch {epoch})")]
    ScriptMiss { id: String, kind: QueryKind, epoch: u32 },
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A chat-completion service. Shared across augmentation workers.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
}

/// OpenAI-style chat-completion endpoint over HTTP.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    retries: u32,
    base_delay: Duration,
}

pub const API_KEY_ENV: &str = "LLM_API_KEY";

impl HttpBackend {
    /// Reads the API key from `LLM_API_KEY` when set.
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("HTTP client"),
            url: url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry_policy(mut self, retries: u32, base_delay: Duration) -> Self {
        self.retries = retries;
        self.base_delay = base_delay;
        self
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "logprobs": request.logprobs,
            "temperature": 0,
        })
    }

    fn send_once(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        let mut req = self.client.post(&self.url).json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body,
            });
        }
        parse_chat_completion(&body)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        let mut attempt = 0;
        loop {
            match self.send_once(request) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    let delay = self.base_delay * 2u32.pow(attempt);
                    log::warn!("{}: {e}; retrying in {delay:?}", request.instance_id);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
}

/// Extracts text and per-token log-probabilities from a chat-completion body.
pub fn parse_chat_completion(body: &str) -> Result<BackendResponse, BackendError> {
    let c: Completion =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let choice = c
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Malformed("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let logprobs = choice
        .logprobs
        .and_then(|l| l.content)
        .map(|v| v.into_iter().map(|t| (t.token, t.logprob)).collect());
    Ok(BackendResponse::new(text, logprobs))
}
