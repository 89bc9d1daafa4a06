//! LLM client contract and the non-mock implementations.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::error::{MadsError, Result};

/// One completion call. `sample` distinguishes repeated queries of the same
/// prompt; `attempt` counts retries after unusable responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub model_id: &'a str,
    pub sample: u32,
    pub attempt: u32,
}

pub trait LlmClient: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        (**self).complete(request)
    }
}

/// Counts calls to an inner client.
pub struct CountingClient<C> {
    pub inner: C,
    calls: AtomicUsize,
}

impl<C: LlmClient> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: LlmClient> LlmClient for CountingClient<C> {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// Returns queued responses in order regardless of the prompt, and records
/// every prompt it receives.
#[derive(Default)]
pub struct ScriptedClient {
    responses: Mutex<VecDeque<String>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self { responses: Mutex::new(responses.into_iter().map(Into::into).collect()), prompts: Mutex::default() }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        self.prompts.lock().expect("prompt log").push(request.prompt.to_string());
        self.responses
            .lock()
            .expect("response queue")
            .pop_front()
            .ok_or_else(|| MadsError::Client("scripted client has no responses left".into()))
    }
}

/// Client for OpenAI-compatible `chat/completions` endpoints over plain HTTP.
/// The API key is read from an environment variable at call time and is never
/// stored, logged or cached.
pub struct HttpClient {
    endpoint: String,
    key_env: String,
    http: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("endpoint", &self.endpoint).field("key_env", &self.key_env).finish()
    }
}

impl HttpClient {
    /// `base_url` such as `http://localhost:8000/v1`; `key_env` names the
    /// variable holding the bearer token (optional at call time).
    pub fn new(base_url: &str, key_env: &str, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| MadsError::Client(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            key_env: key_env.to_string(),
            http,
        })
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Ok(key) = std::env::var(&self.key_env) {
            req = req.bearer_auth(key);
        }
        // Errors are reported without the request so the header never leaks.
        let resp = req.send().map_err(|e| MadsError::Client(format!("request to {} failed: {}", self.endpoint, e.without_url())))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(MadsError::Client(format!("{} returned HTTP {status}", self.endpoint)));
        }
        let value: serde_json::Value =
            resp.json().map_err(|e| MadsError::Client(format!("invalid JSON from {}: {e}", self.endpoint)))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| MadsError::Client(format!("{} response has no choices[0].message.content", self.endpoint)))
    }
}
