//! Chat-completion access.
//!
//! Every LLM call in the engine goes through a [`Gateway`], which maps a
//! logical call site (the request tag) to a model and temperature and hands
//! the request to a [`ChatProvider`]. Two providers exist: the live
//! [`OpenAiClient`] and the [`ScriptedProvider`] that replays recorded
//! responses keyed by `(request_tag, per-tag ordinal)`.

mod http;
pub mod prompts;
mod record;
mod scripted;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{OpenAiClient, RetryPolicy};
pub(crate) use http::{build_agent as http_agent, post_json_with_retry as post_json};
pub use prompts::{render, render_text, PromptAsset, RenderError};
pub use record::RecordingProvider;
pub use scripted::{load_script, save_script, ScriptRecord, ScriptedProvider};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider gave up after {attempts} attempts: {last_error}")]
    ProviderExhausted { attempts: u32, last_error: String },
    #[error("no scripted response for tag {tag:?} ordinal {ordinal}")]
    ScriptMismatch { tag: String, ordinal: usize },
    #[error("credential missing: environment variable {0} is not set")]
    CredentialMissing(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("could not decode provider response: {0}")]
    Decode(String),
    #[error("script I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| LlmError::InvalidRequest("no messages".into()))?;
        if first.role == MessageRole::Assistant {
            return Err(LlmError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        (**self).complete(request)
    }
}

/// Logical call sites. Tags are `"<site>"` or `"expert:<agent name>"`.
pub mod tags {
    pub const CAPTAIN: &str = "captain";
    pub const SELECTOR: &str = "selector";
    pub const GENERATOR: &str = "generator";
    pub const COMPRESSOR: &str = "compressor";
    pub const MANAGER: &str = "manager";
    pub const REFLECTOR: &str = "reflector";
    pub const STATIC_BUILDER: &str = "static_builder";

    pub fn expert(name: &str) -> String {
        format!("expert:{name}")
    }

    /// The site part of a tag (`expert:Foo` -> `expert`).
    pub fn site(tag: &str) -> &str {
        tag.split(':').next().unwrap_or(tag)
    }
}

/// Model and sampling settings per call site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTable {
    pub default_model: String,
    pub models: BTreeMap<String, String>,
    pub temperatures: BTreeMap<String, f64>,
    pub max_tokens: u32,
}

impl Default for ModelTable {
    fn default() -> Self {
        Self {
            default_model: "gpt-4".into(),
            models: BTreeMap::new(),
            temperatures: BTreeMap::new(),
            max_tokens: 4096,
        }
    }
}

impl ModelTable {
    pub fn model_for(&self, tag: &str) -> &str {
        self.models
            .get(tags::site(tag))
            .unwrap_or(&self.default_model)
    }

    /// Zero unless configured for the site.
    pub fn temperature_for(&self, tag: &str) -> f64 {
        self.temperatures
            .get(tags::site(tag))
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    models: ModelTable,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, models: ModelTable) -> Self {
        Self { provider, models }
    }

    pub fn models(&self) -> &ModelTable {
        &self.models
    }

    pub fn request(&self, tag: &str, messages: Vec<Message>) -> CompletionRequest {
        CompletionRequest {
            model: self.models.model_for(tag).to_string(),
            messages,
            temperature: self.models.temperature_for(tag),
            max_tokens: self.models.max_tokens,
            request_tag: tag.to_string(),
        }
    }

    pub fn complete(&self, tag: &str, messages: Vec<Message>) -> Result<String, LlmError> {
        let request = self.request(tag, messages);
        request.validate()?;
        let completion = self.provider.complete(&request)?;
        tracing::debug!(tag, chars = completion.content.len(), "completion");
        Ok(completion.content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let gw = Gateway::new(
            Arc::new(ScriptedProvider::default()),
            ModelTable::default(),
        );
        assert!(gw.request("captain", vec![]).validate().is_err());
        assert!(gw
            .request("captain", vec![Message::assistant("x")])
            .validate()
            .is_err());
        let mut ok = gw.request("captain", vec![Message::user("x")]);
        ok.validate().unwrap();
        ok.temperature = 2.5;
        assert!(ok.validate().is_err());
    }

    #[test]
    fn model_table_routes_sites() {
        let mut table = ModelTable::default();
        table.models.insert("expert".into(), "llama-3-70b".into());
        table.temperatures.insert("captain".into(), 0.7);
        assert_eq!(table.model_for("expert:Foo_Expert"), "llama-3-70b");
        assert_eq!(table.model_for("captain"), "gpt-4");
        assert_eq!(table.temperature_for("captain"), 0.7);
        assert_eq!(table.temperature_for("selector"), 0.0);
    }
}
