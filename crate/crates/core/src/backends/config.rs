//! Declarative backend configuration and the builder that turns it into a
//! [`Backends`] value.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::hashing::HashingEmbedder;
use super::openai::{HttpTagger, ImageMode, OpenAiClient};
use super::scripted::{Script, ScriptedChat, ScriptedEmbed, ScriptedTagger, ScriptedVision};
use super::{BackendError, BackendIdentity, BackendPolicy, Backends, Capability, ResponseCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    /// OpenAI-compatible HTTP endpoint.
    Openai,
    /// Rule-based responses from a script file.
    Scripted,
    /// Feature-hashing embedder (embed only).
    Hashing,
}

impl TransportKind {
    fn as_str(self) -> &'static str {
        match self {
            TransportKind::Openai => "openai",
            TransportKind::Scripted => "scripted",
            TransportKind::Hashing => "hashing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub kind: TransportKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub policy: BackendPolicy,
    /// Script file for `scripted` transports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub image_mode: ImageMode,
    /// Vector size for the `hashing` embedder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl EndpointConfig {
    pub fn scripted(script: impl Into<PathBuf>) -> Self {
        Self {
            kind: TransportKind::Scripted,
            endpoint: String::new(),
            model_id: "scripted".into(),
            api_key_env: None,
            policy: BackendPolicy::default(),
            script: Some(script.into()),
            image_mode: ImageMode::Locator,
            dim: None,
        }
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            kind: self.kind.as_str().to_string(),
            endpoint: self.endpoint.clone(),
            model_id: self.model_id.clone(),
        }
    }

    fn client(&self) -> Result<OpenAiClient, BackendError> {
        if self.endpoint.trim().is_empty() {
            return Err(BackendError::InvalidRequest("openai backend needs an endpoint".into()));
        }
        let key = match &self.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let timeout = Duration::from_millis(self.policy.timeout_ms);
        Ok(OpenAiClient::new(&self.endpoint, key, timeout).image_mode(self.image_mode))
    }

    fn script(&self, base: &Path) -> Result<Script, BackendError> {
        let path = self
            .script
            .as_ref()
            .ok_or_else(|| BackendError::InvalidRequest("scripted backend needs a script path".into()))?;
        Script::load(&resolve(base, path))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<EndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<EndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision: Option<EndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagger: Option<EndpointConfig>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl BackendsConfig {
    /// Every configured endpoint's policy gets `max_in_flight` overridden.
    pub fn set_max_in_flight(&mut self, n: usize) {
        for ep in [&mut self.chat, &mut self.embed, &mut self.vision, &mut self.tagger].into_iter().flatten() {
            ep.policy.max_in_flight = n.max(1);
        }
    }

    /// Builds the clients. Relative paths resolve against `base`; `cache_dir`
    /// overrides the configured cache location when given.
    pub fn build(&self, base: &Path, cache_dir: Option<&Path>, offline: bool) -> Result<Backends, BackendError> {
        let mut b = Backends::new().offline(offline);
        let cache = cache_dir.map(Path::to_path_buf).or_else(|| self.cache_dir.as_ref().map(|p| resolve(base, p)));
        if let Some(dir) = cache {
            b = b.with_cache(ResponseCache::open(dir)?);
        } else if offline {
            return Err(BackendError::InvalidRequest("offline mode needs a cache directory".into()));
        }

        if let Some(c) = &self.chat {
            let t: Arc<dyn super::ChatTransport> = match c.kind {
                TransportKind::Openai => Arc::new(c.client()?),
                TransportKind::Scripted => Arc::new(ScriptedChat::from_script(c.script(base)?.chat)),
                TransportKind::Hashing => return Err(unsupported(c.kind, Capability::Chat)),
            };
            b = b.with_chat(t, c.policy.clone(), c.identity());
        }
        if let Some(c) = &self.embed {
            let t: Arc<dyn super::EmbedTransport> = match c.kind {
                TransportKind::Openai => Arc::new(c.client()?),
                TransportKind::Scripted => Arc::new(ScriptedEmbed::from_script(c.script(base)?.embed)),
                TransportKind::Hashing => Arc::new(HashingEmbedder::new(c.dim.unwrap_or(256))),
            };
            b = b.with_embed(t, c.policy.clone(), c.identity());
        }
        if let Some(c) = &self.vision {
            let t: Arc<dyn super::VisionTransport> = match c.kind {
                TransportKind::Openai => Arc::new(c.client()?),
                TransportKind::Scripted => Arc::new(ScriptedVision::from_script(c.script(base)?.vision)),
                TransportKind::Hashing => return Err(unsupported(c.kind, Capability::Vision)),
            };
            b = b.with_vision(t, c.policy.clone(), c.identity());
        }
        if let Some(c) = &self.tagger {
            let t: Arc<dyn super::TagTransport> = match c.kind {
                TransportKind::Openai => Arc::new(HttpTagger::new(c.client()?)),
                TransportKind::Scripted => Arc::new(ScriptedTagger::from_script(c.script(base)?.tagger)),
                TransportKind::Hashing => return Err(unsupported(c.kind, Capability::Tag)),
            };
            b = b.with_tagger(t, c.policy.clone(), c.identity());
        }
        Ok(b)
    }
}

fn unsupported(kind: TransportKind, cap: Capability) -> BackendError {
    BackendError::InvalidRequest(format!("`{}` transport cannot serve {cap}", kind.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_and_builds_scripted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.json"), r#"{"chat": {"default": "hi"}}"#).unwrap();
        let cfg: BackendsConfig = toml::from_str(
            r#"
            cache_dir = "cache"
            [chat]
            kind = "scripted"
            script = "s.json"
            model_id = "fake"
            [embed]
            kind = "hashing"
            dim = 32
            "#,
        )
        .unwrap();
        let b = cfg.build(dir.path(), None, false).unwrap();
        assert!(b.has(Capability::Chat) && b.has(Capability::Embed));
        assert!(!b.has(Capability::Vision));
        assert_eq!(b.embed(&["x".into()]).unwrap()[0].len(), 32);
        let req = b.chat_request("s", "u").unwrap();
        assert_eq!(req.model_id, "fake");
        assert_eq!(b.chat_complete(&req).unwrap(), "hi");
        assert!(dir.path().join("cache").is_dir());
    }

    #[test]
    fn offline_without_cache_is_rejected() {
        assert!(BackendsConfig::default().build(Path::new("."), None, true).is_err());
    }

    #[test]
    fn hashing_chat_is_rejected() {
        let cfg: BackendsConfig = toml::from_str("[chat]\nkind = \"hashing\"").unwrap();
        assert!(cfg.build(Path::new("."), None, false).is_err());
    }
}
