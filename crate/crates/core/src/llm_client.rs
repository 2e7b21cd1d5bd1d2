//! Batched generation against a chat-completions HTTP endpoint, with a
//! content-addressed response cache, bounded concurrency, retries and a
//! request budget.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::jsonl::{read_jsonl, sha256_hex, JsonlError};
use crate::prompts::PromptKind;

pub const DEFAULT_TEMPERATURE: f32 = 0.0;
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TeacherTag {
    Llama2_7b,
    Mixtral8x7b,
    Gpt35,
    Other(String),
}

impl TeacherTag {
    pub fn as_str(&self) -> &str {
        match self {
            TeacherTag::Llama2_7b => "llama2_7b",
            TeacherTag::Mixtral8x7b => "mixtral_8x7b",
            TeacherTag::Gpt35 => "gpt35",
            TeacherTag::Other(s) => s,
        }
    }
}

impl fmt::Display for TeacherTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TeacherTag {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Ok(match key.as_str() {
            "llama27b" | "llama2" | "llama" => TeacherTag::Llama2_7b,
            "mixtral8x7b" | "mixtral" => TeacherTag::Mixtral8x7b,
            "gpt35" | "gpt35turbo" | "chatgpt" => TeacherTag::Gpt35,
            _ => TeacherTag::Other(s.to_string()),
        })
    }
}

impl Serialize for TeacherTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TeacherTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|e| match e {}))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub request_id: String,
    pub prompt: String,
    pub model: String,
    pub max_new_tokens: u32,
    pub temperature: f32,
    pub teacher_tag: TeacherTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_kind: Option<PromptKind>,
    /// Target or category a zero-shot prompt asks about.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenStatus {
    Ok,
    FailedAfterRetries,
    OverBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResult {
    pub request_id: String,
    pub status: GenStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub attempts: u32,
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_kind: Option<PromptKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    pub teacher_tag: TeacherTag,
}

impl GenResult {
    fn for_request(req: &GenRequest, status: GenStatus) -> Self {
        GenResult {
            request_id: req.request_id.clone(),
            status,
            text: None,
            attempts: 0,
            cached: false,
            error: None,
            review_id: req.review_id.clone(),
            prompt_kind: req.prompt_kind,
            instance: req.instance.clone(),
            teacher_tag: req.teacher_tag.clone(),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    /// Network failure, timeout, 429 or 5xx: worth retrying.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Permanent(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("max_in_flight must be at least 1")]
    ZeroInFlight,
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error("request {0}: max_new_tokens must be positive")]
    ZeroMaxTokens(String),
    #[error("request {0}: temperature must be a finite value >= 0")]
    BadTemperature(String),
    #[error("duplicate request_id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("http client: {0}")]
    Http(String),
}

/// Anything that turns a request into completion text.
pub trait Backend: Sync {
    fn complete(&self, req: &GenRequest) -> impl Future<Output = Result<String, BackendError>> + Send;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `next` (2-based): base, 2*base, 4*base, ...
    pub fn backoff(&self, next: u32) -> Duration {
        self.base_backoff
            .saturating_mul(1u32 << (next.saturating_sub(2)).min(16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Maximum number of non-cached requests issued.
    pub budget: Option<usize>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            budget: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f32,
    max_new_tokens: u32,
}

/// Cache key for greedy requests; `None` when sampling is involved.
pub fn cache_key(req: &GenRequest) -> Option<String> {
    if req.temperature != 0.0 {
        return None;
    }
    let material = KeyMaterial {
        model: &req.model,
        prompt: &req.prompt,
        temperature: req.temperature,
        max_new_tokens: req.max_new_tokens,
    };
    let json = serde_json::to_vec(&material).expect("key material serializes");
    Some(sha256_hex(&json))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    text: String,
}

/// Directory of JSONL segments mapping request hashes to completions. Each
/// process appends to a fresh segment; all segments are read on open.
pub struct ResponseCache {
    dir: PathBuf,
    map: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, ClientError> {
        let io = |source| ClientError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut segments: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        segments.sort();
        let mut map = HashMap::new();
        for seg in &segments {
            for entry in read_jsonl::<CacheEntry>(seg)? {
                map.entry(entry.key).or_insert(entry.text);
            }
        }
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
            map: RwLock::new(map),
            writer: Mutex::new(None),
        })
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.map.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: &str, text: &str) -> Result<(), ClientError> {
        {
            let mut map = self.map.write().expect("cache lock");
            if map.contains_key(key) {
                return Ok(());
            }
            map.insert(key.to_string(), text.to_string());
        }
        let mut guard = self.writer.lock().expect("cache writer lock");
        if guard.is_none() {
            let mut n = 0usize;
            let path = loop {
                let p = self.dir.join(format!("segment-{n:05}.jsonl"));
                if !p.exists() {
                    break p;
                }
                n += 1;
            };
            let file = OpenOptions::new()
                .create_new(true)
                .write(true)
                .open(&path)
                .map_err(|source| ClientError::Io { path, source })?;
            *guard = Some(BufWriter::new(file));
        }
        let w = guard.as_mut().expect("writer just set");
        let line = serde_json::to_string(&CacheEntry {
            key: key.to_string(),
            text: text.to_string(),
        })
        .map_err(JsonlError::from)?;
        let io = |source| ClientError::Io {
            path: self.dir.clone(),
            source,
        };
        w.write_all(line.as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }
}

// ---------------------------------------------------------------------------
// Batch driver
// ---------------------------------------------------------------------------

fn validate(requests: &[GenRequest], cfg: &BatchConfig) -> Result<(), ClientError> {
    if cfg.max_in_flight == 0 {
        return Err(ClientError::ZeroInFlight);
    }
    if cfg.retry.max_attempts == 0 {
        return Err(ClientError::ZeroAttempts);
    }
    let mut seen = std::collections::HashSet::new();
    for r in requests {
        if r.max_new_tokens == 0 {
            return Err(ClientError::ZeroMaxTokens(r.request_id.clone()));
        }
        if !r.temperature.is_finite() || r.temperature < 0.0 {
            return Err(ClientError::BadTemperature(r.request_id.clone()));
        }
        if !seen.insert(r.request_id.as_str()) {
            return Err(ClientError::DuplicateId(r.request_id.clone()));
        }
    }
    Ok(())
}

async fn run_one<B: Backend>(backend: &B, req: &GenRequest, policy: RetryPolicy) -> GenResult {
    let mut result = GenResult::for_request(req, GenStatus::FailedAfterRetries);
    for attempt in 1..=policy.max_attempts {
        if attempt > 1 {
            tokio::time::sleep(policy.backoff(attempt)).await;
        }
        result.attempts = attempt;
        match backend.complete(req).await {
            Ok(text) => {
                result.status = GenStatus::Ok;
                result.text = Some(text);
                result.error = None;
                return result;
            }
            Err(BackendError::Transient(msg)) => {
                log::debug!("{} attempt {attempt}: {msg}", req.request_id);
                result.error = Some(msg);
            }
            Err(BackendError::Permanent(msg)) => {
                result.error = Some(msg);
                return result;
            }
        }
    }
    result
}

/// Runs a batch. Results come back in completion order (cache hits first);
/// use `request_id` to reassociate. `on_result` sees each result as it lands.
pub async fn generate_batch<B: Backend>(
    backend: &B,
    requests: &[GenRequest],
    cfg: &BatchConfig,
    cache: Option<&ResponseCache>,
    mut on_result: impl FnMut(&GenResult),
) -> Result<Vec<GenResult>, ClientError> {
    validate(requests, cfg)?;
    let mut out = Vec::with_capacity(requests.len());
    let mut emit = |r: GenResult, out: &mut Vec<GenResult>| {
        on_result(&r);
        out.push(r);
    };

    // Cache hits, then in-batch duplicates of a pending greedy request.
    let keys: Vec<Option<String>> = requests.iter().map(cache_key).collect();
    let mut leader_of: HashMap<&str, usize> = HashMap::new();
    let mut followers: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut pending = Vec::new();
    for (i, req) in requests.iter().enumerate() {
        if let (Some(key), Some(cache)) = (&keys[i], cache) {
            if let Some(text) = cache.get(key) {
                let mut r = GenResult::for_request(req, GenStatus::Ok);
                r.text = Some(text);
                r.cached = true;
                emit(r, &mut out);
                continue;
            }
        }
        if let Some(key) = &keys[i] {
            if let Some(&lead) = leader_of.get(key.as_str()) {
                followers.entry(lead).or_default().push(i);
                continue;
            }
            leader_of.insert(key, i);
        }
        pending.push(i);
    }

    let issue = cfg.budget.unwrap_or(usize::MAX).min(pending.len());
    for &i in &pending[issue..] {
        emit(GenResult::for_request(&requests[i], GenStatus::OverBudget), &mut out);
        for &f in followers.get(&i).into_iter().flatten() {
            emit(GenResult::for_request(&requests[f], GenStatus::OverBudget), &mut out);
        }
    }

    let policy = cfg.retry;
    let mut completions = stream::iter(pending[..issue].iter().copied())
        .map(|i| async move { (i, run_one(backend, &requests[i], policy).await) })
        .buffer_unordered(cfg.max_in_flight);
    while let Some((i, result)) = completions.next().await {
        if let (Some(key), Some(cache), Some(text)) = (&keys[i], cache, &result.text) {
            cache.insert(key, text)?;
        }
        let follow: Vec<GenResult> = followers
            .get(&i)
            .into_iter()
            .flatten()
            .map(|&f| {
                let mut r = GenResult::for_request(&requests[f], result.status);
                r.text = result.text.clone();
                r.error = result.error.clone();
                r.cached = result.status == GenStatus::Ok;
                r
            })
            .collect();
        emit(result, &mut out);
        for r in follow {
            emit(r, &mut out);
        }
    }
    Ok(out)
}

/// Puts results back in request order.
pub fn sort_by_requests(results: &mut [GenResult], requests: &[GenRequest]) {
    let pos: HashMap<&str, usize> = requests
        .iter()
        .enumerate()
        .map(|(i, r)| (r.request_id.as_str(), i))
        .collect();
    results.sort_by_key(|r| pos.get(r.request_id.as_str()).copied().unwrap_or(usize::MAX));
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended.
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, ClientError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Http(e.to_string()))?;
        let base = cfg.url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(HttpBackend {
            client,
            url,
            api_key: cfg.api_key.clone(),
        })
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
    content: Option<String>,
}

impl Backend for HttpBackend {
    fn complete(&self, req: &GenRequest) -> impl Future<Output = Result<String, BackendError>> + Send {
        let body = serde_json::json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_new_tokens,
        });
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        async move {
            let resp = builder
                .send()
                .await
                .map_err(|e| BackendError::Transient(e.to_string()))?;
            let status = resp.status();
            let bytes = resp
                .bytes()
                .await
                .map_err(|e| BackendError::Transient(e.to_string()))?;
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(BackendError::Transient(format!("HTTP {status}")));
            }
            if !status.is_success() {
                let snippet: String = String::from_utf8_lossy(&bytes).chars().take(200).collect();
                return Err(BackendError::Permanent(format!("HTTP {status}: {snippet}")));
            }
            let parsed: ChatResponse = serde_json::from_slice(&bytes)
                .map_err(|e| BackendError::Permanent(format!("malformed response: {e}")))?;
            parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| {
                    BackendError::Permanent("malformed response: no choices[0].message.content".into())
                })
        }
    }
}

/// Backend for cache-only runs: every miss fails without touching the network.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineBackend;

impl Backend for OfflineBackend {
    fn complete(&self, _req: &GenRequest) -> impl Future<Output = Result<String, BackendError>> + Send {
        std::future::ready(Err(BackendError::Permanent(
            "no endpoint configured and the response is not cached".into(),
        )))
    }
}
