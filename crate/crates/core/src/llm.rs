//! LLM completion clients: an OpenAI-compatible HTTP client and a
//! table-driven mock for tests and offline runs.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{ClientError, Error, Result};

/// Anything that turns a (system, user) prompt pair into completion text.
///
/// Implementations must tolerate concurrent calls.
pub trait LlmClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, ClientError>;

    /// Model identifier recorded in benchmark reports.
    fn model(&self) -> &str;
}

/// Environment variable holding the chat-completions API key.
pub const LLM_API_KEY_ENV: &str = "HGMF_LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct ChatConfig {
    /// Base URL (`http://host:port/v1`) or a full `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub temperature: f64,
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(LLM_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(60),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Blocking client for `POST /chat/completions`.
pub struct OpenAiClient {
    config: ChatConfig,
    url: String,
    http: reqwest::blocking::Client,
}

impl OpenAiClient {
    pub fn new(config: ChatConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build HTTP client: {e}")))?;
        let url = endpoint_url(&config.endpoint, "chat/completions");
        Ok(OpenAiClient { config, url, http })
    }
}

pub(crate) fn endpoint_url(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}/{path}")
    }
}

pub(crate) fn map_reqwest(e: reqwest::Error) -> ClientError {
    if e.is_timeout() {
        ClientError::Timeout
    } else {
        ClientError::Transport(e.to_string())
    }
}

pub(crate) fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
    http: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &B,
) -> std::result::Result<R, ClientError> {
    let mut req = http.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(map_reqwest)?;
    let status = resp.status();
    let text = resp.text().map_err(map_reqwest)?;
    if !status.is_success() {
        return Err(ClientError::Status {
            status: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| ClientError::Response(e.to_string()))
}

impl LlmClient for OpenAiClient {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, ClientError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: user,
                },
            ],
            temperature: self.config.temperature,
        };
        let resp: ChatResponse =
            post_json(&self.http, &self.url, self.config.api_key.as_deref(), &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Response("no choices in completion".into()))
    }

    fn model(&self) -> &str {
        &self.config.model
    }
}

/// A canned completion returned when every `contains` substring occurs in
/// the user prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub completion: String,
}

/// Table-driven client; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockClient {
    #[serde(default = "mock_model")]
    pub model: String,
    pub rules: Vec<MockRule>,
    /// Reply when no rule matches; `None` makes the call fail.
    #[serde(default)]
    pub default: Option<String>,
}

fn mock_model() -> String {
    "mock".into()
}

impl MockClient {
    pub fn new(rules: Vec<MockRule>, default: Option<String>) -> Self {
        MockClient {
            model: mock_model(),
            rules,
            default,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(crate::catalog::classify_json_error)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("mock fixture serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

impl LlmClient for MockClient {
    fn complete(&self, _system: &str, user: &str) -> std::result::Result<String, ClientError> {
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|p| user.contains(p.as_str())))
            .map(|r| r.completion.clone())
            .or_else(|| self.default.clone())
            .ok_or_else(|| ClientError::Response("mock has no rule for this prompt".into()))
    }

    fn model(&self) -> &str {
        &self.model
    }
}
