//! Generation backends: a chat-completions HTTP client and a deterministic
//! mock used for offline evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::PromptPayload;

pub const DEFAULT_BASE_RATE: f64 = 0.05;
pub const MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_API_KEY_ENV: &str = "CAMP_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_transport(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self, LlmError::Protocol(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Caller-chosen id echoed in the response.
    #[serde(default)]
    pub id: String,
    pub payload: PromptPayload,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Benchmark task this request belongs to; read by the mock backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

impl GenerationRequest {
    pub fn new(payload: PromptPayload, n_samples: usize) -> Self {
        Self {
            id: String::new(),
            payload,
            n_samples,
            temperature: 0.8,
            max_tokens: 256,
            seed: None,
            task_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.n_samples == 0 {
            return Err(LlmError::InvalidRequest("n_samples must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub request_id: String,
    pub samples: Vec<String>,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait Generator: Send + Sync {
    fn backend_id(&self) -> String;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        rules: PathBuf,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        /// Name of the environment variable holding the bearer token.
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_concurrency")]
        max_concurrency: usize,
    },
}

fn default_timeout() -> f64 {
    30.0
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_concurrency() -> usize {
    4
}

/// Instantiates a backend. Paths in the config are taken as given.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn Generator>, LlmError> {
    match config {
        BackendConfig::Mock { rules } => Ok(Box::new(MockBackend::from_file(rules)?)),
        BackendConfig::Http {
            endpoint,
            model,
            timeout_secs,
            api_key_env,
            max_concurrency,
        } => {
            let key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
            Ok(Box::new(HttpBackend::new(
                endpoint,
                model,
                Duration::from_secs_f64(*timeout_secs),
                key,
                *max_concurrency,
            )?))
        }
    }
}

/// Needle-oracle rules: a task is solved whenever the prompt contains its
/// needle, otherwise with probability `base_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRules {
    #[serde(default)]
    pub needles: BTreeMap<String, String>,
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Ignore a needle that only appears after the first history message.
    #[serde(default)]
    pub history_shadowing: bool,
}

fn default_base_rate() -> f64 {
    DEFAULT_BASE_RATE
}

impl Default for MockRules {
    fn default() -> Self {
        Self {
            needles: BTreeMap::new(),
            base_rate: DEFAULT_BASE_RATE,
            seed: 0,
            history_shadowing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: MockRules,
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Result<Self, LlmError> {
        if !(0.0..=1.0).contains(&rules.base_rate) {
            return Err(LlmError::Config(format!("base_rate {} outside [0, 1]", rules.base_rate)));
        }
        Ok(Self { rules })
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let rules = serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::new(rules)
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    /// Text the oracle searches for the needle.
    fn visible_text(&self, payload: &PromptPayload) -> String {
        match payload {
            PromptPayload::Chat(msgs) if self.rules.history_shadowing => msgs
                .iter()
                .take_while(|m| m.role != "assistant")
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
            PromptPayload::Flat(s) if self.rules.history_shadowing => {
                let marker = format!("<<<{} ", crate::prompt::ComponentKind::MessageHistory);
                s.find(&marker).map_or(s.clone(), |i| s[..i].to_string())
            }
            p => p.full_text(),
        }
    }

    fn rng_for(&self, request: &GenerationRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.rules.seed.to_le_bytes());
        h.update(request.seed.unwrap_or(0).to_le_bytes());
        h.update(request.task_id.as_deref().unwrap_or("").as_bytes());
        h.update([0]);
        h.update(request.payload.full_text().as_bytes());
        let d = h.finalize();
        ChaCha8Rng::from_seed(d.into())
    }
}

impl Generator for MockBackend {
    fn backend_id(&self) -> String {
        "mock-needle".to_string()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        request.validate()?;
        let needle = request.task_id.as_ref().and_then(|t| self.rules.needles.get(t));
        let seen = needle.is_some_and(|n| self.visible_text(&request.payload).contains(n.as_str()));
        let mut rng = self.rng_for(request);
        let samples = (0..request.n_samples)
            .map(|i| {
                let lucky = rng.gen::<f64>() < self.rules.base_rate;
                match needle {
                    Some(n) if seen || lucky => format!("result = {n}(args)  # sample {i}\n"),
                    _ => format!("raise NotImplementedError  # sample {i}\n"),
                }
            })
            .collect();
        Ok(GenerationResponse {
            request_id: request.id.clone(),
            samples,
            backend_id: self.backend_id(),
            latency_ms: 0,
        })
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [crate::prompt::ChatMessage],
    n: usize,
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Blocking chat-completions client.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    slots: Slots,
    backoff: Duration,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(endpoint: &str, model: &str, timeout: Duration, api_key: Option<String>, max_concurrency: usize) -> Result<Self, LlmError> {
        if max_concurrency == 0 {
            return Err(LlmError::Config("max_concurrency must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            slots: Slots {
                free: Mutex::new(max_concurrency),
                cv: Condvar::new(),
            },
            backoff: Duration::from_millis(200),
        })
    }

    /// Base delay before the first retry; doubles per attempt, with ±50% jitter.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    fn attempt(&self, body: &ChatRequest<'_>, n: usize) -> Result<Vec<String>, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(LlmError::Transport {
                attempts: 1,
                message: format!("HTTP {status}"),
            }));
        }
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| Attempt::Fatal(LlmError::Protocol(e.to_string())))?;
        if parsed.choices.len() != n {
            return Err(Attempt::Fatal(LlmError::Protocol(format!(
                "expected {n} choices, got {}",
                parsed.choices.len()
            ))));
        }
        let mut choices: Vec<(usize, String)> = Vec::with_capacity(n);
        for (pos, c) in parsed.choices.into_iter().enumerate() {
            let content = c
                .message
                .content
                .ok_or_else(|| Attempt::Fatal(LlmError::Protocol(format!("choice {pos} has no content"))))?;
            choices.push((c.index.unwrap_or(pos), content));
        }
        choices.sort_by_key(|(i, _)| *i);
        Ok(choices.into_iter().map(|(_, s)| s).collect())
    }
}

impl Generator for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        request.validate()?;
        let messages = match &request.payload {
            PromptPayload::Chat(m) => m.clone(),
            PromptPayload::Flat(s) => vec![crate::prompt::ChatMessage {
                role: "user".into(),
                content: s.clone(),
            }],
        };
        let body = ChatRequest {
            model: &self.model,
            messages: &messages,
            n: request.n_samples,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        };
        let _slot = self.slots.acquire();
        let start = Instant::now();
        let mut rng = rand::thread_rng();
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.attempt(&body, request.n_samples) {
                Ok(samples) => {
                    return Ok(GenerationResponse {
                        request_id: request.id.clone(),
                        samples,
                        backend_id: self.backend_id(),
                        latency_ms: start.elapsed().as_millis() as u64,
                    })
                }
                Err(Attempt::Fatal(LlmError::Transport { message, .. })) => {
                    return Err(LlmError::Transport { attempts: attempt, message })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    last = msg;
                    if attempt < MAX_ATTEMPTS {
                        let base = self.backoff.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
                        std::thread::sleep(Duration::from_secs_f64(base * rng.gen_range(0.5..1.5)));
                    }
                }
            }
        }
        Err(LlmError::Transport {
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }
}
