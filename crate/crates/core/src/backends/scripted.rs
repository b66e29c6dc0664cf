//! Scripted transports for tests, fixtures and dry runs.
//!
//! A script is a JSON document with one section per capability. Chat and
//! vision sections hold ordered rules; the first rule whose `all` substrings
//! are all present (and whose `none` substrings are all absent) wins. A rule
//! either returns `response` verbatim or raises the scripted `error`.
//!
//! ```json
//! {
//!   "chat":   { "rules": [ { "all": ["clustering criteria"], "response": "* Mood" } ] },
//!   "vision": { "rules": [ { "source": "img_01", "all": ["Describe"], "response": "A dog." } ] },
//!   "embed":  { "vectors": { "cat": [1, 0], "sky": [0, 1] }, "dim": 64 },
//!   "tagger": { "images": [ { "source": "img_01", "scores": { "dog": 0.9 } } ] }
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hashing::HashingEmbedder;
use super::{
    BackendError, ChatRequest, ChatTransport, EmbedRequest, EmbedTransport, TagRequest, TagTransport,
    VisionRequest, VisionTransport,
};
use crate::types::name_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    RateLimited,
    Server,
    Timeout,
    Auth,
    Malformed,
    Fetch,
}

impl ScriptedFailure {
    fn to_error(self, context: &str) -> BackendError {
        let msg = format!("scripted failure for {context}");
        match self {
            ScriptedFailure::RateLimited => BackendError::RateLimited(msg),
            ScriptedFailure::Server => BackendError::Server { status: 500, message: msg },
            ScriptedFailure::Timeout => BackendError::Timeout(msg),
            ScriptedFailure::Auth => BackendError::Auth(msg),
            ScriptedFailure::Malformed => BackendError::Malformed(msg),
            ScriptedFailure::Fetch => BackendError::ImageFetch {
                source_locator: context.to_string(),
                message: "scripted fetch failure".into(),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    #[serde(default)]
    pub all: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub none: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
}

impl ChatRule {
    pub fn contains(all: &[&str], response: &str) -> Self {
        Self {
            all: all.iter().map(|s| s.to_string()).collect(),
            response: Some(response.to_string()),
            ..Default::default()
        }
    }

    pub fn excluding(mut self, none: &[&str]) -> Self {
        self.none = none.iter().map(|s| s.to_string()).collect();
        self
    }

    fn matches(&self, haystack: &str) -> bool {
        self.all.iter().all(|s| haystack.contains(s.as_str()))
            && !self.none.iter().any(|s| haystack.contains(s.as_str()))
    }

    fn answer(&self, context: &str) -> Result<String, BackendError> {
        if let Some(err) = self.error {
            return Err(err.to_error(context));
        }
        self.response
            .clone()
            .ok_or_else(|| BackendError::Unscripted(format!("rule without response for {context}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatScript {
    #[serde(default)]
    pub rules: Vec<ChatRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisionRule {
    /// Substring of the image locator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(flatten)]
    pub rule: ChatRule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisionScript {
    #[serde(default)]
    pub rules: Vec<VisionRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedScript {
    /// Explicit vectors keyed by case-insensitive text.
    #[serde(default)]
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Dimension of the hashing fallback used for unscripted texts.
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagImageScores {
    pub source: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagScript {
    #[serde(default)]
    pub images: Vec<TagImageScores>,
    #[serde(default)]
    pub default_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub chat: ChatScript,
    #[serde(default)]
    pub vision: VisionScript,
    #[serde(default)]
    pub embed: EmbedScript,
    #[serde(default)]
    pub tagger: TagScript,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Transport(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Malformed(format!("script {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    script: ChatScript,
}

impl ScriptedChat {
    pub fn new(rules: Vec<ChatRule>) -> Self {
        Self { script: ChatScript { rules, default: None } }
    }

    pub fn from_script(script: ChatScript) -> Self {
        Self { script }
    }
}

impl ChatTransport for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let haystack = format!("{}\n{}", request.system_prompt, request.user_prompt);
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(&haystack)) {
            return rule.answer("chat request");
        }
        self.script.default.clone().ok_or_else(|| {
            let head: String = request.user_prompt.chars().take(80).collect();
            BackendError::Unscripted(format!("chat prompt starting {head:?}"))
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedVision {
    script: VisionScript,
}

impl ScriptedVision {
    pub fn new(rules: Vec<VisionRule>) -> Self {
        Self { script: VisionScript { rules, default: None } }
    }

    pub fn from_script(script: VisionScript) -> Self {
        Self { script }
    }
}

impl VisionTransport for ScriptedVision {
    fn describe(&self, request: &VisionRequest) -> Result<String, BackendError> {
        let haystack = format!("{}\n{}", request.system_prompt, request.prompt);
        let rule = self.script.rules.iter().find(|r| {
            r.source.as_deref().is_none_or(|s| request.source.contains(s)) && r.rule.matches(&haystack)
        });
        if let Some(rule) = rule {
            return rule.rule.answer(&request.source);
        }
        self.script
            .default
            .clone()
            .ok_or_else(|| BackendError::Unscripted(format!("vision request for `{}`", request.source)))
    }
}

/// Scripted vectors with a hashing fallback for everything else.
#[derive(Debug, Clone)]
pub struct ScriptedEmbed {
    vectors: BTreeMap<String, Vec<f64>>,
    fallback: HashingEmbedder,
}

impl ScriptedEmbed {
    pub fn new(vectors: BTreeMap<String, Vec<f64>>, fallback_dim: usize) -> Self {
        let vectors = vectors.into_iter().map(|(k, v)| (name_key(&k), v)).collect();
        Self { vectors, fallback: HashingEmbedder::new(fallback_dim) }
    }

    pub fn from_script(script: EmbedScript) -> Self {
        Self::new(script.vectors, script.dim)
    }
}

impl ScriptedEmbed {
    fn scripted_dim(&self) -> usize {
        self.vectors.values().map(Vec::len).max().unwrap_or(0)
    }
}

impl EmbedTransport for ScriptedEmbed {
    /// Scripted vectors occupy the leading coordinates and hashed fallbacks
    /// the trailing ones, so the two families are mutually orthogonal.
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        let lead = self.scripted_dim();
        Ok(request
            .texts
            .iter()
            .map(|t| match self.vectors.get(&name_key(t)) {
                Some(v) => {
                    let mut out = v.clone();
                    out.resize(lead + self.fallback.dim(), 0.0);
                    out
                }
                None => {
                    let mut out = vec![0.0; lead];
                    out.extend(self.fallback.vector(t));
                    out
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedTagger {
    script: TagScript,
}

impl ScriptedTagger {
    pub fn from_script(script: TagScript) -> Self {
        Self { script }
    }

    /// Same scores for every image.
    pub fn uniform(scores: BTreeMap<String, f64>) -> Self {
        Self {
            script: TagScript {
                images: vec![TagImageScores { source: String::new(), scores }],
                default_score: 0.0,
            },
        }
    }
}

impl TagTransport for ScriptedTagger {
    fn score(&self, request: &TagRequest) -> Result<Vec<f64>, BackendError> {
        let table = self.script.images.iter().find(|i| request.source.contains(&i.source));
        Ok(request
            .vocabulary
            .iter()
            .map(|tag| {
                table
                    .and_then(|t| {
                        t.scores.get(tag).or_else(|| {
                            let key = name_key(tag);
                            t.scores.iter().find(|(k, _)| name_key(k) == key).map(|(_, v)| v)
                        })
                    })
                    .copied()
                    .unwrap_or(self.script.default_score)
            })
            .collect())
    }
}
