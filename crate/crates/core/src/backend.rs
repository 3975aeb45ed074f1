//! Text-generation backends behind a single blocking interface.
//!
//! Implementations: [`HttpBackend`] speaking the JSON chat-completions wire
//! protocol, [`ScriptedBackend`] for deterministic tests, and
//! [`ReplayBackend`], a content-addressed on-disk cache that can optionally
//! record through an inner backend. All of them meter token usage, estimated
//! when the backend does not report it.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_CHARS_PER_TOKEN: u32 = 4;
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
/// Not stated by the method description; see the config docs.
pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const API_KEY_ENV: &str = "DEMOFORGE_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication: {0}")]
    Auth(String),
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("server returned {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("no script entry for request {seed_tag:?}")]
    Script { seed_tag: String },
    #[error("replay cache miss for {seed_tag:?} (key {key})")]
    CacheMiss { seed_tag: String, key: String },
    #[error("replay cache io at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One generation request. `seed_tag` names the sampling slot so repeated
/// samples of the same prompt stay distinct in caches and scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    pub seed_tag: String,
}

impl GenRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if self.n < 1 {
            return Err(BackendError::InvalidRequest("n must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    /// Exactly `request.n` completions; refusals surface as empty strings.
    pub completions: Vec<String>,
    pub usage: Usage,
}

/// A text-generation backend. Implementations must be safe for concurrent
/// `generate` calls; a request with n > 1 is a single wire call.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        (**self).generate(request)
    }
}

/// Deterministic token estimate: ceil(byte length / chars_per_token).
pub fn estimate_tokens(text: &str, chars_per_token: u32) -> u64 {
    let cpt = chars_per_token.max(1) as u64;
    (text.len() as u64).div_ceil(cpt)
}

fn estimated_usage(prompt: &str, completions: &[String], chars_per_token: u32) -> Usage {
    Usage {
        input_tokens: estimate_tokens(prompt, chars_per_token),
        output_tokens: completions
            .iter()
            .map(|c| estimate_tokens(c, chars_per_token))
            .sum(),
    }
}

// ---------------------------------------------------------------------------
// scripted mock

/// Canned completions keyed by `seed_tag`. Lookup order: the exact tag, the
/// tag with its `#k` sample suffix stripped (indexing into the entry list),
/// `*/<step>`, then `*`.
pub struct ScriptedBackend {
    entries: HashMap<String, Vec<String>>,
    chars_per_token: u32,
}

impl ScriptedBackend {
    pub fn new<K, V>(entries: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<Vec<String>>,
    {
        ScriptedBackend {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
        }
    }

    /// Script file: a JSON object mapping seed tags to a string or an array
    /// of strings.
    pub fn from_json_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::CacheIo {
            path: path.display().to_string(),
            source,
        })?;
        let raw: HashMap<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| BackendError::BadResponse(format!("script {path:?}: {e}")))?;
        let mut entries = HashMap::new();
        for (key, value) in raw {
            let list = match value {
                serde_json::Value::String(s) => vec![s],
                serde_json::Value::Array(items) => items
                    .into_iter()
                    .map(|v| match v {
                        serde_json::Value::String(s) => Ok(s),
                        other => Err(BackendError::BadResponse(format!(
                            "script entry {key:?} must hold strings, got {other}"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                other => {
                    return Err(BackendError::BadResponse(format!(
                        "script entry {key:?} must be a string or array, got {other}"
                    )))
                }
            };
            entries.insert(key, list);
        }
        Ok(ScriptedBackend { entries, chars_per_token: DEFAULT_CHARS_PER_TOKEN })
    }

    fn resolve(&self, seed_tag: &str) -> Option<(&[String], Option<usize>)> {
        if let Some(list) = self.entries.get(seed_tag) {
            return Some((list, None));
        }
        let (base, sample) = match seed_tag.rsplit_once('#') {
            Some((base, idx)) => (base, idx.parse::<usize>().ok()),
            None => (seed_tag, None),
        };
        if let Some(list) = self.entries.get(base) {
            return Some((list, sample));
        }
        if let Some((_, step)) = base.rsplit_once('/') {
            if let Some(list) = self.entries.get(&format!("*/{step}")) {
                return Some((list, sample));
            }
        }
        self.entries.get("*").map(|list| (list.as_slice(), sample))
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        request.validate()?;
        let (list, sample) = self
            .resolve(&request.seed_tag)
            .filter(|(list, _)| !list.is_empty())
            .ok_or_else(|| BackendError::Script { seed_tag: request.seed_tag.clone() })?;
        let completions: Vec<String> = match sample {
            Some(k) if request.n == 1 => vec![list[k % list.len()].clone()],
            _ => (0..request.n as usize)
                .map(|i| list[i % list.len()].clone())
                .collect(),
        };
        Ok(GenResponse {
            usage: estimated_usage(&request.prompt, &completions, self.chars_per_token),
            completions,
        })
    }
}

/// Always fails. Inject as the inner transport to prove a path performs no
/// network activity.
pub struct FailingBackend;

impl Backend for FailingBackend {
    fn generate(&self, _request: &GenRequest) -> Result<GenResponse, BackendError> {
        Err(BackendError::Transport {
            attempts: 0,
            detail: "this backend must never be reached".into(),
        })
    }
}

/// Counts wire calls passing through to the inner backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(request)
    }
}

// ---------------------------------------------------------------------------
// record / replay cache

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    request: GenRequest,
    response: GenResponse,
}

/// Content-addressed response cache. In replay mode (`inner` = None) a miss
/// is an error and no network is ever touched; in record mode misses go to
/// the inner backend and the response is persisted.
pub struct ReplayBackend {
    dir: PathBuf,
    model_id: String,
    inner: Option<Box<dyn Backend>>,
    write_lock: Mutex<()>,
}

impl ReplayBackend {
    pub fn replay(dir: impl Into<PathBuf>, model_id: impl Into<String>) -> Self {
        ReplayBackend {
            dir: dir.into(),
            model_id: model_id.into(),
            inner: None,
            write_lock: Mutex::new(()),
        }
    }

    pub fn recording(
        dir: impl Into<PathBuf>,
        model_id: impl Into<String>,
        inner: Box<dyn Backend>,
    ) -> Self {
        ReplayBackend {
            dir: dir.into(),
            model_id: model_id.into(),
            inner: Some(inner),
            write_lock: Mutex::new(()),
        }
    }

    pub fn cache_key(&self, request: &GenRequest) -> String {
        let mut hasher = Sha256::new();
        for part in [
            self.model_id.as_str(),
            request.prompt.as_str(),
            &format!("{:?}", request.temperature),
            &request.n.to_string(),
            &format!("{:?}", request.max_tokens),
            request.seed_tag.as_str(),
        ] {
            hasher.update(part.as_bytes());
            hasher.update([0u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn io_err(path: &Path, source: std::io::Error) -> BackendError {
        BackendError::CacheIo { path: path.display().to_string(), source }
    }
}

impl Backend for ReplayBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        request.validate()?;
        let key = self.cache_key(request);
        let path = self.entry_path(&key);
        if path.exists() {
            let text =
                std::fs::read_to_string(&path).map_err(|e| Self::io_err(&path, e))?;
            let entry: CacheEntry = serde_json::from_str(&text)
                .map_err(|e| BackendError::BadResponse(format!("cache entry {key}: {e}")))?;
            return Ok(entry.response);
        }

        let Some(inner) = &self.inner else {
            return Err(BackendError::CacheMiss { seed_tag: request.seed_tag.clone(), key });
        };
        let response = inner.generate(request)?;

        let entry = CacheEntry { request: request.clone(), response: response.clone() };
        let serialized = serde_json::to_string_pretty(&entry)
            .map_err(|e| BackendError::BadResponse(format!("cache serialize: {e}")))?;
        let _guard = self.write_lock.lock().expect("cache write lock poisoned");
        std::fs::create_dir_all(&self.dir).map_err(|e| Self::io_err(&self.dir, e))?;
        let tmp = self.dir.join(format!(".{key}.tmp"));
        {
            let mut file = std::fs::File::create(&tmp).map_err(|e| Self::io_err(&tmp, e))?;
            file.write_all(serialized.as_bytes())
                .map_err(|e| Self::io_err(&tmp, e))?;
        }
        std::fs::rename(&tmp, &path).map_err(|e| Self::io_err(&path, e))?;
        Ok(response)
    }
}

// ---------------------------------------------------------------------------
// live HTTP chat-completions backend

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// API root; `/chat/completions` is appended unless already present.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub chars_per_token: u32,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
            api_key_env: API_KEY_ENV.to_string(),
        }
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    n: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireChoiceMessage>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport { attempts: 0, detail: e.to_string() })?;
        Ok(HttpBackend { config, client })
    }

    fn api_key(&self) -> Result<String, BackendError> {
        std::env::var(&self.config.api_key_env).map_err(|_| {
            BackendError::Auth(format!(
                "environment variable {} is not set",
                self.config.api_key_env
            ))
        })
    }

    fn backoff(attempt: u32) -> Duration {
        let millis = 250u64.saturating_mul(1 << attempt.min(6));
        Duration::from_millis(millis.min(10_000))
    }

    fn should_retry(status: u16) -> bool {
        status == 408 || status == 429 || (500..600).contains(&status)
    }
}

impl Backend for HttpBackend {
    /// One wire call regardless of `n`; transient failures retried with
    /// exponential backoff up to the configured cap.
    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError> {
        request.validate()?;
        let key = self.api_key()?;
        let body = WireRequest {
            model: &self.config.model,
            messages: [WireMessage { role: "user", content: &request.prompt }],
            temperature: request.temperature,
            n: request.n,
            max_tokens: request.max_tokens,
        };
        let endpoint = self.config.endpoint();

        let mut attempt = 0u32;
        loop {
            let result = self
                .client
                .post(&endpoint)
                .bearer_auth(&key)
                .json(&body)
                .send();

            let retriable: String = match result {
                Ok(response) => {
                    let status = response.status().as_u16();
                    let text = response.text().unwrap_or_default();
                    if status == 401 || status == 403 {
                        return Err(BackendError::Auth(format!("server returned {status}")));
                    }
                    if (200..300).contains(&status) {
                        return self.parse_response(request, &text);
                    }
                    if !Self::should_retry(status) {
                        return Err(BackendError::Http { status, body: text });
                    }
                    format!("status {status}")
                }
                Err(e) => e.to_string(),
            };

            if attempt >= self.config.max_retries {
                return Err(BackendError::Transport {
                    attempts: attempt + 1,
                    detail: retriable,
                });
            }
            std::thread::sleep(Self::backoff(attempt));
            attempt += 1;
        }
    }
}

impl HttpBackend {
    fn parse_response(
        &self,
        request: &GenRequest,
        text: &str,
    ) -> Result<GenResponse, BackendError> {
        let wire: WireResponse = serde_json::from_str(text)
            .map_err(|e| BackendError::BadResponse(format!("{e}; body: {text}")))?;
        let mut completions: Vec<String> = wire
            .choices
            .into_iter()
            .map(|c| c.message.and_then(|m| m.content).unwrap_or_default())
            .collect();
        completions.resize(request.n as usize, String::new());
        let usage = match wire.usage {
            Some(u) => Usage {
                input_tokens: u
                    .prompt_tokens
                    .unwrap_or_else(|| estimate_tokens(&request.prompt, self.config.chars_per_token)),
                output_tokens: u.completion_tokens.unwrap_or_else(|| {
                    completions
                        .iter()
                        .map(|c| estimate_tokens(c, self.config.chars_per_token))
                        .sum()
                }),
            },
            None => estimated_usage(&request.prompt, &completions, self.config.chars_per_token),
        };
        Ok(GenResponse { completions, usage })
    }
}
