//! Chat-completion client used by the writer, the few-shot selector and
//! query expansion. Every caller has a deterministic fallback, so a
//! [`ChatError`] never aborts a run.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {0}")]
    Status(u16),
    #[error("malformed completion response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_retries() -> u32 {
    1
}

fn default_api_key_env() -> String {
    "BIASGUARD_CHAT_API_KEY".to_string()
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            api_key_env: default_api_key_env(),
        }
    }
}

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
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client. Temperature is pinned to 0.
pub struct OpenAiChatClient {
    client: reqwest::blocking::Client,
    config: ChatConfig,
    api_key: Option<String>,
}

impl std::fmt::Debug for OpenAiChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl OpenAiChatClient {
    pub fn new(config: ChatConfig) -> Result<Self, ChatError> {
        let api_key = std::env::var(&config.api_key_env).ok();
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: ChatConfig, api_key: Option<String>) -> Result<Self, ChatError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ChatError::Transport(format!("failed to build http client: {e}")))?;
        Ok(Self {
            client,
            config,
            api_key,
        })
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut req = self.client.post(&self.config.endpoint).json(&CompletionRequest {
            model: &self.config.model,
            messages,
            temperature: 0.0,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ChatError::Status(status.as_u16()));
        }
        let body: CompletionResponse = resp.json().map_err(|e| ChatError::Malformed(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ChatError::Malformed("no choices[0].message.content".into()))
    }
}

impl ChatClient for OpenAiChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut last = ChatError::Transport("no attempt made".into());
        for attempt in 0..=self.config.retries {
            match self.attempt(messages) {
                Ok(text) => return Ok(text),
                Err(err @ (ChatError::Transport(_) | ChatError::Status(500..=599))) => {
                    log::warn!("chat attempt {} failed: {err}", attempt + 1);
                    last = err;
                }
                Err(err) => return Err(err),
            }
        }
        Err(last)
    }
}
