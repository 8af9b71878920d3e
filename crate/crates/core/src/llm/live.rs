use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{Completion, CompletionProvider, CompletionRequest, LlmError, Speaker, TokenUsage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("network access is disabled")]
    Disabled,
}

/// Minimal HTTP surface used by [`LiveProvider`].
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Refuses every request and counts the attempts.
#[derive(Clone, Default)]
pub struct FailClosedTransport {
    attempts: Arc<AtomicUsize>,
}

impl FailClosedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Transport for FailClosedTransport {
    fn post_json(&self, _: &str, _: &[(String, String)], _: &str) -> Result<HttpResponse, TransportError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Disabled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

/// Chat-completions client with bounded exponential-backoff retry.
pub struct LiveProvider {
    config: LiveConfig,
    transport: Box<dyn Transport>,
    sleep: Sleeper,
    api_key: Option<String>,
}

impl LiveProvider {
    pub fn new(config: LiveConfig, transport: Box<dyn Transport>) -> Self {
        LiveProvider {
            config,
            transport,
            sleep: Box::new(std::thread::sleep),
            api_key: None,
        }
    }

    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    /// Use this key instead of reading the configured environment variable.
    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    fn request_body(req: &CompletionRequest) -> Value {
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        json!({
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
        })
    }

    fn parse_response(body: &str) -> Result<Completion, String> {
        let v: Value = serde_json::from_str(body).map_err(|e| format!("bad JSON: {e}"))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or("response has no choices[0].message.content")?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: v
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok(Completion { text, usage })
    }
}

impl CompletionProvider for LiveProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        req.validate()?;
        let key = match &self.api_key {
            Some(k) => k.clone(),
            None => std::env::var(&self.config.api_key_env)
                .map_err(|_| LlmError::MissingApiKey(self.config.api_key_env.clone()))?,
        };
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let headers = vec![("authorization".to_string(), format!("Bearer {key}"))];
        let body = Self::request_body(req).to_string();

        let mut last = String::new();
        let mut backoff = self.config.initial_backoff;
        for attempt in 1..=self.config.max_attempts {
            let retryable = match self.transport.post_json(&url, &headers, &body) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return Self::parse_response(&resp.body).map_err(|message| {
                        LlmError::Provider { attempts: attempt, message }
                    });
                }
                Ok(resp) => {
                    last = format!("HTTP {}: {}", resp.status, truncate(&resp.body, 200));
                    resp.status == 429 || resp.status >= 500
                }
                Err(TransportError::Disabled) => {
                    return Err(LlmError::Provider {
                        attempts: attempt,
                        message: TransportError::Disabled.to_string(),
                    });
                }
                Err(e) => {
                    last = e.to_string();
                    true
                }
            };
            if !retryable {
                return Err(LlmError::Provider { attempts: attempt, message: last });
            }
            if attempt < self.config.max_attempts {
                (self.sleep)(backoff);
                backoff *= 2;
            }
        }
        Err(LlmError::Provider {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Message, Role};
    use std::sync::Mutex;

    struct Scripted {
        responses: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        seen: Mutex<Vec<(String, String)>>,
    }

    impl Transport for Scripted {
        fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpResponse, TransportError> {
            assert!(headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer k"));
            self.seen.lock().unwrap().push((url.to_string(), body.to_string()));
            self.responses.lock().unwrap().remove(0)
        }
    }

    fn req() -> CompletionRequest {
        CompletionRequest {
            role: Role::GenerateTest,
            messages: vec![Message::system("s"), Message::user("u")],
            temperature: 0.7,
            model: "gpt-4o-mini".into(),
        }
    }

    fn ok_body(text: &str) -> HttpResponse {
        HttpResponse {
            status: 200,
            body: json!({"choices": [{"message": {"content": text}}], "usage": {"prompt_tokens": 11, "completion_tokens": 5}}).to_string(),
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let t = Scripted {
            responses: Mutex::new(vec![
                Err(TransportError::Timeout),
                Ok(HttpResponse { status: 503, body: "busy".into() }),
                Ok(ok_body("hello")),
            ]),
            seen: Mutex::new(vec![]),
        };
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let s2 = sleeps.clone();
        let p = LiveProvider::new(LiveConfig::default(), Box::new(t))
            .with_api_key("k")
            .with_sleeper(move |d| s2.lock().unwrap().push(d));
        let out = p.complete(&req()).unwrap();
        assert_eq!(out.text, "hello");
        assert_eq!(out.usage.prompt_tokens, 11);
        assert_eq!(*sleeps.lock().unwrap(), [Duration::from_millis(500), Duration::from_millis(1000)]);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let t = Scripted {
            responses: Mutex::new(vec![Err(TransportError::Timeout); 3]),
            seen: Mutex::new(vec![]),
        };
        let p = LiveProvider::new(LiveConfig::default(), Box::new(t))
            .with_api_key("k")
            .with_sleeper(|_| {});
        assert!(matches!(p.complete(&req()), Err(LlmError::Provider { attempts: 3, .. })));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted {
            responses: Mutex::new(vec![Ok(HttpResponse { status: 401, body: "no".into() })]),
            seen: Mutex::new(vec![]),
        };
        let p = LiveProvider::new(LiveConfig::default(), Box::new(t)).with_api_key("k").with_sleeper(|_| {});
        assert!(matches!(p.complete(&req()), Err(LlmError::Provider { attempts: 1, .. })));
    }

    #[test]
    fn wire_format() {
        let body = LiveProvider::request_body(&req());
        assert_eq!(body["model"], "gpt-4o-mini");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "u");
        assert_eq!(body["temperature"], 0.7);
    }

    #[test]
    fn fail_closed_counts() {
        let t = FailClosedTransport::new();
        let p = LiveProvider::new(LiveConfig::default(), Box::new(t.clone())).with_api_key("k");
        assert!(p.complete(&req()).is_err());
        assert_eq!(t.attempts(), 1);
    }
}
