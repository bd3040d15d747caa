//! Chat-completion backend abstraction: an HTTP client for OpenAI-compatible
//! endpoints with retry/backoff, and a deterministic scripted mock. One wire
//! shape covers every model role in the pipeline (reference generation,
//! augmentation, consistency checking); a role is just a backend config.
//!
//! Auth is env-var indirection only; no secret material is ever stored in
//! configs, logs, or reports.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("auth env var {0} is not set")]
    AuthMissing(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("http status {status}")]
    Status { status: u16 },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("invalid backend config: {0}")]
    BadConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One chat completion request. `model` may be empty to use the backend's
/// configured default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub model: String,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        let user = user.into();
        debug_assert!(!user.is_empty(), "chat requests need a user message");
        Self {
            system: system.into(),
            user,
            temperature: 0.0,
            max_tokens: 1024,
            model: String::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

/// Connection settings shared by the chat and embedding HTTP clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Name of the env var holding the bearer token, if the endpoint needs one.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_ms() -> u64 {
    30_000
}

impl HttpEndpoint {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_env: None,
            max_attempts: default_max_attempts(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

/// Declarative backend selection for config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Http(HttpEndpoint),
    Mock {
        /// Response script file; alternatively inline entries.
        #[serde(default)]
        script: Option<PathBuf>,
        #[serde(default)]
        entries: Vec<MockEntry>,
    },
}

/// One scripted mock response. Entries with `match` are pattern entries:
/// the first whose substring occurs in the request's user text answers, and
/// they are never consumed. Entries without `match` are positional: consumed
/// strictly in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
}

/// A chat completion backend. Implementations are shareable across threads;
/// each call is independent.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Deterministic scripted backend: same script + same request sequence
/// produce byte-identical responses.
pub struct MockBackend {
    patterns: Vec<(String, String)>,
    positional: Vec<String>,
    cursor: Mutex<usize>,
}

impl MockBackend {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        let mut patterns = Vec::new();
        let mut positional = Vec::new();
        for entry in entries {
            match entry.pattern {
                Some(p) => patterns.push((p, entry.response)),
                None => positional.push(entry.response),
            }
        }
        Self { patterns, positional, cursor: Mutex::new(0) }
    }

    /// Positional-only script: responses returned in order.
    pub fn from_responses(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::new(
            responses
                .into_iter()
                .map(|r| MockEntry { pattern: None, response: r.into() })
                .collect(),
        )
    }

    /// Pattern-only script: (substring, response) pairs.
    pub fn from_patterns(
        pairs: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>,
    ) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(p, r)| MockEntry { pattern: Some(p.into()), response: r.into() })
                .collect(),
        )
    }

    pub fn from_script_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<MockEntry> =
            serde_json::from_str(&text).map_err(|e| GatewayError::BadConfig(e.to_string()))?;
        Ok(Self::new(entries))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        for (pattern, response) in &self.patterns {
            if request.user.contains(pattern.as_str()) {
                return Ok(response.clone());
            }
        }
        let mut cursor = self.cursor.lock().expect("mock cursor lock");
        if *cursor >= self.positional.len() {
            return Err(GatewayError::ScriptExhausted);
        }
        let response = self.positional[*cursor].clone();
        *cursor += 1;
        Ok(response)
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

fn backoff_delay(base_ms: u64, attempt: u32) -> Duration {
    let exp = base_ms.saturating_mul(1u64 << attempt.min(16));
    // ±25% jitter; wall-clock nanos are enough randomness for spacing retries.
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos() as u64)
        .unwrap_or(0);
    let jitter = (exp / 4).min(nanos % (exp / 4 + 1));
    if nanos.is_multiple_of(2) {
        Duration::from_millis(exp + jitter)
    } else {
        Duration::from_millis(exp - jitter)
    }
}

/// POST a JSON body with retry on 429/5xx/transport errors and exponential
/// backoff. Shared by the chat and embedding clients.
pub fn post_json<T: DeserializeOwned>(
    endpoint: &HttpEndpoint,
    body: &serde_json::Value,
) -> Result<T, GatewayError> {
    let token = match &endpoint.auth_env {
        Some(var) => match std::env::var(var) {
            Ok(v) => Some(v),
            Err(_) => return Err(GatewayError::AuthMissing(var.clone())),
        },
        None => None,
    };
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
        .http_status_as_error(false)
        .build();
    let agent = config.new_agent();

    let attempts = endpoint.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(backoff_delay(endpoint.backoff_ms, attempt - 1));
        }
        let mut request = agent.post(&endpoint.endpoint);
        if let Some(token) = &token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        match request.send_json(body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                if (200..300).contains(&status) {
                    return response
                        .body_mut()
                        .read_json::<T>()
                        .map_err(|e| GatewayError::BadResponse(e.to_string()));
                }
                if status == 429 || status >= 500 {
                    last = format!("http status {status}");
                    log::warn!("retryable status {status} from {} (attempt {})", endpoint.endpoint, attempt + 1);
                    continue;
                }
                return Err(GatewayError::Status { status });
            }
            Err(e) => {
                last = e.to_string();
                log::warn!("transport error from {} (attempt {}): {e}", endpoint.endpoint, attempt + 1);
            }
        }
    }
    Err(GatewayError::BackendUnavailable { attempts, last })
}

/// OpenAI-compatible chat completions client.
pub struct HttpBackend {
    endpoint: HttpEndpoint,
}

impl HttpBackend {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let model = if request.model.is_empty() { &self.endpoint.model } else { &request.model };
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(serde_json::json!({ "role": "system", "content": request.system }));
        }
        messages.push(serde_json::json!({ "role": "user", "content": request.user }));
        let body = serde_json::json!({
            "model": model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let parsed: ChatResponse = post_json(&self.endpoint, &body)?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::BadResponse("no choices in response".to_string()))
    }
}

/// Instantiate a backend from config (loading the mock script file when one
/// is named).
pub fn make_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, GatewayError> {
    match config {
        BackendConfig::Http(endpoint) => Ok(Box::new(HttpBackend::new(endpoint.clone()))),
        BackendConfig::Mock { script, entries } => {
            let mut all = entries.clone();
            if let Some(path) = script {
                let text = std::fs::read_to_string(path)?;
                let from_file: Vec<MockEntry> =
                    serde_json::from_str(&text).map_err(|e| GatewayError::BadConfig(e.to_string()))?;
                all.extend(from_file);
            }
            Ok(Box::new(MockBackend::new(all)))
        }
    }
}

/// Run many requests with at most `parallelism` in flight; the output order
/// matches the input order and per-item failures are reported per item.
pub fn complete_many(
    backend: &dyn ChatBackend,
    requests: &[ChatRequest],
    parallelism: usize,
) -> Vec<Result<String, GatewayError>> {
    let parallelism = parallelism.max(1);
    if requests.is_empty() {
        return Vec::new();
    }
    if parallelism == 1 {
        return requests.iter().map(|r| backend.complete(r)).collect();
    }

    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<String, GatewayError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(requests.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let result = backend.complete(&requests[i]);
                *results[i].lock().expect("result slot lock") = Some(result);
            });
        }
    });

    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("worker filled slot"))
        .collect()
}
