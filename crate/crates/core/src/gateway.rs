//! Chat-completion client for OpenAI-compatible endpoints.
//!
//! Requests are posted to `<base_url>/v1/chat/completions` with an optional
//! bearer token taken from an environment variable named in the endpoint
//! config. Budgets ride on a vendor extension field (configurable name,
//! default `thinking_budget`): `NoThinking` sends 0, finite budgets send the
//! token count, and `Unlimited` omits the field entirely.
//!
//! The transport is a trait so tests and offline replays can script exact
//! wire exchanges; `HttpTransport` is the real client. No streaming.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::BudgetSpec;

// --- wire types ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: Option<u32>,
    pub temperature: f64,
    pub thinking_budget: Option<BudgetSpec>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![ChatMessage::user(prompt)],
            max_tokens: None,
            temperature: 0.0,
            thinking_budget: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest("messages must be nonempty".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(Error::InvalidRequest("last message must have role \"user\"".into()));
        }
        Ok(())
    }

    /// Serializes for the wire. The budget key name is endpoint-specific.
    pub fn to_wire(&self, budget_field: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
        });
        if let Some(max) = self.max_tokens {
            body["max_tokens"] = json!(max);
        }
        match self.thinking_budget {
            None | Some(BudgetSpec::Unlimited) => {}
            Some(b) => {
                // NoThinking -> 0, Tokens(k) -> k
                body[budget_field] = json!(b.token_limit().expect("finite budget"));
            }
        }
        body
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatResponse {
    pub fn from_wire(body: &str) -> Result<ChatResponse> {
        let value: Value = serde_json::from_str(body).map_err(|e| Error::Protocol {
            status: None,
            message: format!("response body is not valid JSON: {e}: {}", excerpt(body)),
        })?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol {
                status: None,
                message: format!("missing choices[0].message.content: {}", excerpt(body)),
            })?
            .to_string();
        let usage_count = |field: &str| {
            value.pointer(&format!("/usage/{field}")).and_then(Value::as_u64).unwrap_or(0)
        };
        Ok(ChatResponse {
            content,
            prompt_tokens: usage_count("prompt_tokens"),
            completion_tokens: usage_count("completion_tokens"),
        })
    }
}

fn excerpt(body: &str) -> String {
    let trimmed: String = body.chars().take(160).collect();
    if trimmed.len() < body.len() {
        format!("{trimmed}…")
    } else {
        trimmed
    }
}

// --- endpoints and retry policy ------------------------------------------------

fn default_budget_field() -> String {
    "thinking_budget".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_budget_field")]
    pub budget_field: String,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig { base_url: base_url.into(), auth_env_var: None, budget_field: default_budget_field() }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn bearer(&self) -> Result<Option<String>> {
        match &self.auth_env_var {
            None => Ok(None),
            Some(var) if var.is_empty() => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(token) => Ok(Some(token)),
                Err(_) => Err(Error::Config(format!(
                    "auth environment variable {var} is not set"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Exponential backoff: base, 2x base, 4x base, ...
    fn delay_before(&self, next_attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(next_attempt.saturating_sub(2))
    }
}

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

// --- transport ------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct WireResponse {
    pub status: u16,
    pub body: String,
}

/// One POST of a JSON body; implementations decide how bytes move.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> std::result::Result<WireResponse, String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> std::result::Result<WireResponse, String> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(WireResponse { status, body })
    }
}

/// Scripted transport: replays a fixed sequence of outcomes and captures every
/// request body it saw. Used for tests and offline wire replays.
#[derive(Default)]
pub struct ReplayTransport {
    script: Mutex<VecDeque<std::result::Result<WireResponse, String>>>,
    captured: Mutex<Vec<(String, Value)>>,
}

impl ReplayTransport {
    pub fn new(script: Vec<std::result::Result<WireResponse, String>>) -> Self {
        ReplayTransport { script: Mutex::new(script.into()), captured: Mutex::new(Vec::new()) }
    }

    pub fn ok(status: u16, body: impl Into<String>) -> std::result::Result<WireResponse, String> {
        Ok(WireResponse { status, body: body.into() })
    }

    pub fn captured(&self) -> Vec<(String, Value)> {
        self.captured.lock().unwrap().clone()
    }
}

impl Transport for ReplayTransport {
    fn post_json(&self, url: &str, _bearer: Option<&str>, body: &Value) -> std::result::Result<WireResponse, String> {
        self.captured.lock().unwrap().push((url.to_string(), body.clone()));
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err("replay script exhausted".to_string()))
    }
}

// Lets callers keep a handle on a transport they hand to a gateway.
impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> std::result::Result<WireResponse, String> {
        (**self).post_json(url, bearer, body)
    }
}

// --- the gateway ------------------------------------------------------------------

pub struct Gateway {
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(transport: Box<dyn Transport>, retry: RetryPolicy) -> Self {
        Gateway { transport, retry }
    }

    /// Real HTTP gateway with default retry policy and timeout.
    pub fn http() -> Result<Self> {
        Ok(Gateway::new(Box::new(HttpTransport::new(DEFAULT_REQUEST_TIMEOUT)?), RetryPolicy::default()))
    }

    /// Posts a completion request, retrying transport failures and retryable
    /// statuses (429 and 5xx) with exponential backoff. Other non-2xx
    /// statuses and malformed bodies fail immediately as protocol errors.
    pub fn chat_complete(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let url = endpoint.completions_url();
        let bearer = endpoint.bearer()?;
        let body = request.to_wire(&endpoint.budget_field);

        let mut last_failure = String::new();
        let mut last_retryable_status: Option<(u16, String)> = None;
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay_before(attempt));
            }
            match self.transport.post_json(&url, bearer.as_deref(), &body) {
                Err(transport_err) => {
                    last_failure = transport_err;
                    last_retryable_status = None;
                }
                Ok(wire) if is_retryable(wire.status) => {
                    last_retryable_status = Some((wire.status, wire.body));
                }
                Ok(wire) if !(200..300).contains(&wire.status) => {
                    return Err(Error::Protocol {
                        status: Some(wire.status),
                        message: excerpt(&wire.body),
                    });
                }
                Ok(wire) => return ChatResponse::from_wire(&wire.body),
            }
        }
        match last_retryable_status {
            Some((status, body)) => Err(Error::Protocol {
                status: Some(status),
                message: format!("still failing after {} attempts: {}", self.retry.max_attempts, excerpt(&body)),
            }),
            None => Err(Error::Gateway {
                attempts: self.retry.max_attempts,
                message: last_failure,
            }),
        }
    }
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}
