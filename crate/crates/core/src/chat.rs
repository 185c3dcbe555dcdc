//! Minimal client for OpenAI-style chat-completions endpoints.
//!
//! Used by the remote policy backend, the remote judge and answer
//! composition. Transport failures and 5xx/429 replies are retried with
//! exponential backoff; after the last attempt the call fails as
//! unreachable.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatCompletion {
    pub text: String,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEndpoint {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Clone)]
pub struct ChatClient {
    endpoint: ChatEndpoint,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl ChatClient {
    pub fn new(endpoint: ChatEndpoint) -> Self {
        let api_key = endpoint
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let agent = http_agent(Duration::from_millis(endpoint.timeout_ms));
        Self {
            endpoint,
            api_key,
            agent,
        }
    }

    pub fn endpoint(&self) -> &ChatEndpoint {
        &self.endpoint
    }

    pub fn complete(
        &self,
        messages: &[ChatMessage],
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<ChatCompletion, ChatError> {
        let url = format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": temperature,
            "n": 1,
        });
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        let value = with_retries(self.endpoint.retry, || {
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send_json(&body).map_err(|e| Attempt::Retry(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            if status == 429 || status >= 500 {
                return Err(Attempt::Retry(format!("HTTP {status}")));
            }
            if status >= 400 {
                return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
            }
            serde_json::from_str::<Value>(&text).map_err(|e| Attempt::Fatal(e.to_string()))
        })?;
        parse_completion(&value)
    }
}

fn parse_completion(value: &Value) -> Result<ChatCompletion, ChatError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ChatError::BadResponse("missing choices[0].message.content".into()))?;
    let completion_tokens = value
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64);
    Ok(ChatCompletion {
        text: text.to_string(),
        completion_tokens,
    })
}

/// Outcome of one attempt inside [`with_retries`].
pub enum Attempt {
    Retry(String),
    Fatal(String),
}

/// Run `f` up to `policy.attempts` times with doubling backoff.
pub fn with_retries<T>(
    policy: RetryPolicy,
    mut f: impl FnMut() -> Result<T, Attempt>,
) -> Result<T, ChatError> {
    let attempts = policy.attempts.max(1);
    let mut backoff = policy.initial_backoff_ms;
    let mut last = String::new();
    for attempt in 1..=attempts {
        match f() {
            Ok(v) => return Ok(v),
            Err(Attempt::Fatal(msg)) => return Err(ChatError::BadResponse(msg)),
            Err(Attempt::Retry(msg)) => {
                tracing::warn!(attempt, %msg, "chat request failed");
                last = msg;
                if attempt < attempts {
                    thread::sleep(Duration::from_millis(backoff));
                    backoff = backoff.saturating_mul(2);
                }
            }
        }
    }
    Err(ChatError::Unreachable { attempts, last })
}

/// Blocking HTTP agent that hands back 4xx/5xx responses instead of erroring.
pub fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_completion_and_usage() {
        let v = json!({"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"completion_tokens":7}});
        let c = parse_completion(&v).unwrap();
        assert_eq!(c.text, "hi");
        assert_eq!(c.completion_tokens, Some(7));
        assert!(parse_completion(&json!({})).is_err());
    }

    #[test]
    fn retries_are_bounded() {
        let mut calls = 0;
        let policy = RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1,
        };
        let r: Result<(), _> = with_retries(policy, || {
            calls += 1;
            Err(Attempt::Retry("HTTP 503".into()))
        });
        assert_eq!(calls, 3);
        assert!(matches!(r, Err(ChatError::Unreachable { attempts: 3, .. })));
    }

    #[test]
    fn fatal_stops_immediately() {
        let mut calls = 0;
        let r: Result<(), _> = with_retries(RetryPolicy::default(), || {
            calls += 1;
            Err(Attempt::Fatal("HTTP 400".into()))
        });
        assert_eq!(calls, 1);
        assert!(matches!(r, Err(ChatError::BadResponse(_))));
    }
}
