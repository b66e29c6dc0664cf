//! Clients for the four external model capabilities: chat completion, text
//! embedding, image captioning / VQA, and open-vocabulary tagging.
//!
//! A [`Backends`] value wraps one transport per capability with a retry
//! policy, an in-flight bound and the shared [`ResponseCache`]. Transports are
//! either live OpenAI-compatible HTTP clients ([`openai`]) or deterministic
//! scripted doubles ([`scripted`]). In offline mode every request must be
//! served from the cache; a miss is a hard error naming the digest.

pub mod cache;
pub mod config;
pub mod hashing;
pub mod openai;
pub mod policy;
pub mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::types::{ScoredTag, TagRecord};

pub use cache::{CacheKey, ResponseCache};
pub use policy::{BackendPolicy, Semaphore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Chat,
    Embed,
    Vision,
    Tag,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Capability::Chat => "chat",
            Capability::Embed => "embed",
            Capability::Vision => "vision",
            Capability::Tag => "tag",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("gave up after {attempts} attempts: {last}")]
    TransientExhausted { attempts: u32, last: Box<BackendError> },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot fetch image `{source_locator}`: {message}")]
    ImageFetch { source_locator: String, message: String },
    #[error("{0} backend is not configured")]
    NotConfigured(Capability),
    #[error("offline replay: no cached response for digest {digest}")]
    CacheMiss { digest: String },
    #[error("cache error: {0}")]
    Cache(String),
    #[error("no scripted response for {0}")]
    Unscripted(String),
}

impl BackendError {
    /// Rate limits, server errors and timeouts are retried; everything else is final.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::RateLimited(_) | BackendError::Server { .. } | BackendError::Timeout(_)
        )
    }

    /// Errors that affect every request alike (missing configuration,
    /// credentials, cache problems, offline misses); batch stages abort on
    /// these instead of recording a per-item failure.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            BackendError::NotConfigured(_)
                | BackendError::Auth(_)
                | BackendError::CacheMiss { .. }
                | BackendError::Cache(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    /// Sampling seed forwarded to the server; also distinguishes otherwise
    /// identical requests in the cache (e.g. repeated sampling).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
            model_id: String::new(),
            seed: None,
        }
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompts must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionRequest {
    /// File path or URI of the image.
    pub source: String,
    pub system_prompt: String,
    pub prompt: String,
    pub model_id: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl VisionRequest {
    pub fn new(source: impl Into<String>, system_prompt: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            system_prompt: system_prompt.into(),
            prompt: prompt.into(),
            model_id: String::new(),
            max_tokens: 512,
            temperature: 0.0,
        }
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRequest {
    pub source: String,
    pub vocabulary: Vec<String>,
    pub model_id: String,
}

/// Where a backend lives, recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub kind: String,
    pub endpoint: String,
    pub model_id: String,
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

pub trait EmbedTransport: Send + Sync {
    /// Raw (not necessarily normalized) vectors, one per input text.
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError>;
}

pub trait VisionTransport: Send + Sync {
    fn describe(&self, request: &VisionRequest) -> Result<String, BackendError>;
}

pub trait TagTransport: Send + Sync {
    /// One relevance score per vocabulary entry, in vocabulary order.
    fn score(&self, request: &TagRequest) -> Result<Vec<f64>, BackendError>;
}

struct Endpoint<T: ?Sized> {
    transport: Arc<T>,
    policy: BackendPolicy,
    identity: BackendIdentity,
    in_flight: Semaphore,
    calls: AtomicU64,
}

impl<T: ?Sized> Endpoint<T> {
    fn new(transport: Arc<T>, policy: BackendPolicy, identity: BackendIdentity) -> Self {
        let in_flight = Semaphore::new(policy.max_in_flight);
        Self { transport, policy, identity, in_flight, calls: AtomicU64::new(0) }
    }

    fn call<R>(&self, f: impl Fn(&T) -> Result<R, BackendError>) -> Result<R, BackendError> {
        let _permit = self.in_flight.acquire();
        self.policy.run(|| {
            self.calls.fetch_add(1, Ordering::SeqCst);
            f(&self.transport)
        })
    }
}

/// Number of transport invocations per capability since construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub chat: u64,
    pub embed: u64,
    pub vision: u64,
    pub tag: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.chat + self.embed + self.vision + self.tag
    }
}

/// The shared, thread-safe set of model clients used by every stage.
pub struct Backends {
    chat: Option<Endpoint<dyn ChatTransport>>,
    embed: Option<Endpoint<dyn EmbedTransport>>,
    vision: Option<Endpoint<dyn VisionTransport>>,
    tag: Option<Endpoint<dyn TagTransport>>,
    cache: Option<ResponseCache>,
    offline: bool,
    embed_batch: usize,
}

impl Default for Backends {
    fn default() -> Self {
        Self::new()
    }
}

impl Backends {
    pub fn new() -> Self {
        Self {
            chat: None,
            embed: None,
            vision: None,
            tag: None,
            cache: None,
            offline: false,
            embed_batch: 64,
        }
    }

    pub fn with_chat(mut self, t: Arc<dyn ChatTransport>, policy: BackendPolicy, id: BackendIdentity) -> Self {
        self.chat = Some(Endpoint::new(t, policy, id));
        self
    }

    pub fn with_embed(mut self, t: Arc<dyn EmbedTransport>, policy: BackendPolicy, id: BackendIdentity) -> Self {
        self.embed = Some(Endpoint::new(t, policy, id));
        self
    }

    pub fn with_vision(mut self, t: Arc<dyn VisionTransport>, policy: BackendPolicy, id: BackendIdentity) -> Self {
        self.vision = Some(Endpoint::new(t, policy, id));
        self
    }

    pub fn with_tagger(mut self, t: Arc<dyn TagTransport>, policy: BackendPolicy, id: BackendIdentity) -> Self {
        self.tag = Some(Endpoint::new(t, policy, id));
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Serve every request from the cache; misses become [`BackendError::CacheMiss`].
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn is_offline(&self) -> bool {
        self.offline
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn has(&self, capability: Capability) -> bool {
        match capability {
            Capability::Chat => self.chat.is_some(),
            Capability::Embed => self.embed.is_some(),
            Capability::Vision => self.vision.is_some(),
            Capability::Tag => self.tag.is_some(),
        }
    }

    pub fn identities(&self) -> std::collections::BTreeMap<Capability, BackendIdentity> {
        let mut out = std::collections::BTreeMap::new();
        if let Some(e) = &self.chat {
            out.insert(Capability::Chat, e.identity.clone());
        }
        if let Some(e) = &self.embed {
            out.insert(Capability::Embed, e.identity.clone());
        }
        if let Some(e) = &self.vision {
            out.insert(Capability::Vision, e.identity.clone());
        }
        if let Some(e) = &self.tag {
            out.insert(Capability::Tag, e.identity.clone());
        }
        out
    }

    pub fn call_counts(&self) -> CallCounts {
        let n = |c: Option<u64>| c.unwrap_or(0);
        CallCounts {
            chat: n(self.chat.as_ref().map(|e| e.calls.load(Ordering::SeqCst))),
            embed: n(self.embed.as_ref().map(|e| e.calls.load(Ordering::SeqCst))),
            vision: n(self.vision.as_ref().map(|e| e.calls.load(Ordering::SeqCst))),
            tag: n(self.tag.as_ref().map(|e| e.calls.load(Ordering::SeqCst))),
        }
    }

    /// Looks up `key`, or runs `fetch` and stores its result before returning it.
    fn cached<R>(
        &self,
        capability: Capability,
        key: &CacheKey,
        request: impl FnOnce() -> Value,
        decode: impl Fn(&Value) -> Option<R>,
        encode: impl Fn(&R) -> Value,
        fetch: impl FnOnce() -> Result<R, BackendError>,
    ) -> Result<R, BackendError> {
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(key)? {
                return decode(&entry.response).ok_or_else(|| {
                    BackendError::Cache(format!("entry {key} has an unexpected response shape"))
                });
            }
        }
        if self.offline {
            return Err(BackendError::CacheMiss { digest: key.to_string() });
        }
        let value = fetch()?;
        if let Some(cache) = &self.cache {
            cache.put(key, capability, request(), encode(&value))?;
        }
        Ok(value)
    }

    /// Fills the configured model id into a chat request.
    pub fn chat_request(&self, system_prompt: &str, user_prompt: &str) -> Result<ChatRequest, BackendError> {
        let ep = self.chat.as_ref().ok_or(BackendError::NotConfigured(Capability::Chat))?;
        let mut req = ChatRequest::new(system_prompt, user_prompt);
        req.model_id = ep.identity.model_id.clone();
        Ok(req)
    }

    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let ep = self.chat.as_ref().ok_or(BackendError::NotConfigured(Capability::Chat))?;
        request.validate()?;
        let payload = json!({
            "system_prompt": request.system_prompt,
            "user_prompt": request.user_prompt,
        });
        let params = json!({
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        });
        let key = CacheKey::new(Capability::Chat, &request.model_id, &payload, &params);
        self.cached(
            Capability::Chat,
            &key,
            || serde_json::to_value(request).unwrap_or(Value::Null),
            |v| v.as_str().map(str::to_string),
            |s| Value::String(s.clone()),
            || ep.call(|t| t.complete(request)),
        )
    }

    pub fn vision_request(&self, source: &str, system_prompt: &str, prompt: &str) -> Result<VisionRequest, BackendError> {
        let ep = self.vision.as_ref().ok_or(BackendError::NotConfigured(Capability::Vision))?;
        let mut req = VisionRequest::new(source, system_prompt, prompt);
        req.model_id = ep.identity.model_id.clone();
        Ok(req)
    }

    pub fn caption(&self, request: &VisionRequest) -> Result<String, BackendError> {
        let ep = self.vision.as_ref().ok_or(BackendError::NotConfigured(Capability::Vision))?;
        if request.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("vision prompt must be non-empty".into()));
        }
        let payload = json!({
            "source": source_key(&request.source),
            "system_prompt": request.system_prompt,
            "prompt": request.prompt,
        });
        let params = json!({ "temperature": request.temperature, "max_tokens": request.max_tokens });
        let key = CacheKey::new(Capability::Vision, &request.model_id, &payload, &params);
        let text = self.cached(
            Capability::Vision,
            &key,
            || serde_json::to_value(request).unwrap_or(Value::Null),
            |v| v.as_str().map(str::to_string),
            |s| Value::String(s.clone()),
            || ep.call(|t| t.describe(request)),
        )?;
        if text.trim().is_empty() {
            return Err(BackendError::Malformed(format!("empty caption for `{}`", request.source)));
        }
        Ok(text)
    }

    /// Unit-norm embeddings, one per input text. Each text is cached separately.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let ep = self.embed.as_ref().ok_or(BackendError::NotConfigured(Capability::Embed))?;
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("embed needs at least one text".into()));
        }
        let model = ep.identity.model_id.as_str();
        let keys: Vec<CacheKey> = texts
            .iter()
            .map(|t| CacheKey::new(Capability::Embed, model, &json!({ "text": t }), &Value::Null))
            .collect();

        let decode = |v: &Value| -> Option<Vec<f64>> {
            v.as_array()?.iter().map(Value::as_f64).collect()
        };
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            let hit = match &self.cache {
                Some(cache) => cache.get(key)?,
                None => None,
            };
            match hit {
                Some(entry) => {
                    out[i] = Some(decode(&entry.response).ok_or_else(|| {
                        BackendError::Cache(format!("entry {key} is not a vector"))
                    })?)
                }
                None if self.offline => return Err(BackendError::CacheMiss { digest: key.to_string() }),
                None => missing.push(i),
            }
        }

        // Deduplicate before calling out so identical strings share one vector.
        let mut unique: Vec<usize> = Vec::new();
        for &i in &missing {
            if !unique.iter().any(|&j| texts[j] == texts[i]) {
                unique.push(i);
            }
        }
        for chunk in unique.chunks(self.embed_batch.max(1)) {
            let request = EmbedRequest {
                texts: chunk.iter().map(|&i| texts[i].clone()).collect(),
                model_id: model.to_string(),
            };
            let raw = ep.call(|t| t.embed(&request))?;
            if raw.len() != chunk.len() {
                return Err(BackendError::Malformed(format!(
                    "expected {} embeddings, got {}",
                    chunk.len(),
                    raw.len()
                )));
            }
            for (&i, v) in chunk.iter().zip(raw) {
                let v = normalize(v)?;
                if let Some(cache) = &self.cache {
                    cache.put(
                        &keys[i],
                        Capability::Embed,
                        json!({ "text": texts[i], "model_id": model }),
                        json!(v),
                    )?;
                }
                out[i] = Some(v);
            }
        }
        for &i in &missing {
            if out[i].is_none() {
                let j = unique.iter().copied().find(|&j| texts[j] == texts[i]).expect("deduplicated");
                out[i] = out[j].clone();
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }

    /// Top-`k` vocabulary entries for an image, by descending tagger score.
    pub fn tag(&self, image_id: &str, source: &str, vocabulary: &[String], k: usize) -> Result<TagRecord, BackendError> {
        let ep = self.tag.as_ref().ok_or(BackendError::NotConfigured(Capability::Tag))?;
        if vocabulary.is_empty() {
            return Err(BackendError::InvalidRequest("tag vocabulary is empty".into()));
        }
        if k == 0 || k > vocabulary.len() {
            return Err(BackendError::InvalidRequest(format!(
                "k = {k} must be in 1..={}",
                vocabulary.len()
            )));
        }
        let request = TagRequest {
            source: source.to_string(),
            vocabulary: vocabulary.to_vec(),
            model_id: ep.identity.model_id.clone(),
        };
        let payload = json!({ "source": source_key(source), "vocabulary": vocabulary });
        let key = CacheKey::new(Capability::Tag, &request.model_id, &payload, &Value::Null);
        let scores = self.cached(
            Capability::Tag,
            &key,
            || serde_json::to_value(&request).unwrap_or(Value::Null),
            |v| v.as_array()?.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>(),
            |s| json!(s),
            || ep.call(|t| t.score(&request)),
        )?;
        if scores.len() != vocabulary.len() {
            return Err(BackendError::Malformed(format!(
                "tagger returned {} scores for {} tags",
                scores.len(),
                vocabulary.len()
            )));
        }
        let tags = vocabulary
            .iter()
            .zip(scores)
            .map(|(tag, score)| ScoredTag { tag: tag.clone(), score })
            .collect();
        let mut record = TagRecord::new(image_id, tags);
        record.tags.truncate(k);
        Ok(record)
    }
}

/// Cache identity of an image: the SHA-256 of its bytes for readable local
/// files (so moved or regenerated files keep or lose their entries as their
/// content dictates), the locator itself otherwise.
pub fn source_key(source: &str) -> String {
    use sha2::{Digest, Sha256};
    if source.starts_with("data:") {
        return format!("sha256-uri:{}", hex::encode(Sha256::digest(source.as_bytes())));
    }
    if source.contains("://") && !source.starts_with("file://") {
        return source.to_string();
    }
    let path = source.strip_prefix("file://").unwrap_or(source);
    match std::fs::read(path) {
        Ok(bytes) => format!("sha256:{}", hex::encode(Sha256::digest(&bytes))),
        Err(_) => source.to_string(),
    }
}

/// Scales a vector to unit L2 norm.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, BackendError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(BackendError::Malformed("embedding has zero or non-finite norm".into()));
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Dot product of two unit vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
