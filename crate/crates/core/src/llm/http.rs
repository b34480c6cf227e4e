//! OpenAI-compatible chat-completion client.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatProvider, Completion, CompletionRequest, LlmError, Usage};

/// Exponential backoff for transient failures (HTTP 429, 5xx, transport).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub(crate) fn build_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// POSTs `body` as JSON and retries transient failures per `retry`.
pub(crate) fn post_json_with_retry(
    agent: &ureq::Agent,
    url: &str,
    api_key: &str,
    body: &Value,
    retry: &RetryPolicy,
) -> Result<Value, LlmError> {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let outcome = agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .header("Content-Type", "application/json")
            .send_json(body);
        let last_error = match outcome {
            Ok(mut response) => {
                let status = response.status().as_u16();
                let text = response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| LlmError::Decode(e.to_string()))?;
                if (200..300).contains(&status) {
                    return serde_json::from_str(&text).map_err(|e| LlmError::Decode(e.to_string()));
                }
                if !is_transient(status) {
                    return Err(LlmError::Http { status, body: text });
                }
                format!("HTTP {status}: {text}")
            }
            Err(e) => e.to_string(),
        };
        if attempts > retry.max_retries {
            return Err(LlmError::ProviderExhausted {
                attempts,
                last_error,
            });
        }
        let delay = retry.delay(attempts - 1);
        tracing::warn!(url, attempts, ?delay, %last_error, "transient failure, retrying");
        std::thread::sleep(delay);
    }
}

/// Live provider speaking the OpenAI chat-completion wire format.
pub struct OpenAiClient {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            agent: build_agent(timeout),
            retry,
        }
    }

    /// Reads the API key from `env_var`.
    pub fn from_env(
        base_url: impl Into<String>,
        env_var: &str,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let key = std::env::var(env_var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::CredentialMissing(env_var.to_string()))?;
        Ok(Self::new(base_url, key, timeout, retry))
    }

    pub fn wire_body(request: &CompletionRequest) -> Value {
        json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

impl ChatProvider for OpenAiClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let raw = post_json_with_retry(
            &self.agent,
            &url,
            &self.api_key,
            &Self::wire_body(request),
            &self.retry,
        )?;
        let wire: WireResponse =
            serde_json::from_value(raw).map_err(|e| LlmError::Decode(e.to_string()))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Decode("response has no message content".into()))?;
        Ok(Completion {
            content,
            usage: wire.usage,
        })
    }
}
