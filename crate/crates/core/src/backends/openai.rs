//! OpenAI-compatible HTTP transports.
//!
//! - chat: `POST {endpoint}/chat/completions`
//! - embeddings: `POST {endpoint}/embeddings`
//! - vision: `POST {endpoint}/chat/completions` with an `image_url` content part
//! - tagging: `POST {endpoint}/tag` with `{model, image, vocabulary}` returning
//!   `{"scores": [..]}` aligned with the vocabulary
//!
//! Status codes map onto [`BackendError`]: 429 is a rate limit, 5xx a server
//! error, 401/403 an auth error, other 4xx a rejected request.

use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendError, ChatRequest, ChatTransport, EmbedRequest, EmbedTransport, TagRequest, TagTransport,
    VisionRequest, VisionTransport,
};

/// How images reach a vision endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    /// Read the image and send it as a base64 data URI.
    #[default]
    Inline,
    /// Send the locator as-is (the server must be able to resolve it).
    Locator,
}

#[derive(Debug, Clone)]
pub struct OpenAiClient {
    endpoint: String,
    api_key: Option<String>,
    image_mode: ImageMode,
    agent: ureq::Agent,
}

impl OpenAiClient {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            image_mode: ImageMode::Inline,
            agent: config.into(),
        }
    }

    pub fn image_mode(mut self, mode: ImageMode) -> Self {
        self.image_mode = mode;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.endpoint, path.trim_start_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Malformed(format!("unreadable body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| BackendError::Malformed(format!("invalid JSON from {url}: {e}"))),
            429 => Err(BackendError::RateLimited(snippet(&text))),
            401 | 403 => Err(BackendError::Auth(snippet(&text))),
            500..=599 => Err(BackendError::Server { status, message: snippet(&text) }),
            _ => Err(BackendError::InvalidRequest(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }

    fn chat_body(&self, model: &str, messages: Value, temperature: f64, max_tokens: u32, seed: Option<u64>) -> Value {
        let mut body = json!({
            "model": model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "stream": false,
        });
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn image_url(&self, source: &str) -> Result<String, BackendError> {
        match self.image_mode {
            ImageMode::Locator => Ok(source.to_string()),
            ImageMode::Inline => {
                if source.starts_with("data:") {
                    return Ok(source.to_string());
                }
                let bytes = if source.starts_with("http://") || source.starts_with("https://") {
                    self.fetch_remote(source)?
                } else {
                    let path = source.strip_prefix("file://").unwrap_or(source);
                    std::fs::read(path).map_err(|e| BackendError::ImageFetch {
                        source_locator: source.to_string(),
                        message: e.to_string(),
                    })?
                };
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                Ok(format!("data:{};base64,{b64}", mime_for(source)))
            }
        }
    }

    fn fetch_remote(&self, url: &str) -> Result<Vec<u8>, BackendError> {
        let fetch_err = |message: String| BackendError::ImageFetch { source_locator: url.to_string(), message };
        let mut resp = self.agent.get(url).call().map_err(|e| fetch_err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fetch_err(format!("HTTP {}", resp.status())));
        }
        resp.body_mut().read_to_vec().map_err(|e| fetch_err(e.to_string()))
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}

fn map_transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
        ureq::Error::StatusCode(429) => BackendError::RateLimited("HTTP 429".into()),
        ureq::Error::StatusCode(s @ 500..=599) => BackendError::Server { status: s, message: String::new() },
        ureq::Error::StatusCode(s @ (401 | 403)) => BackendError::Auth(format!("HTTP {s}")),
        other => BackendError::Transport(other.to_string()),
    }
}

fn mime_for(source: &str) -> &'static str {
    let ext = Path::new(source)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/jpeg",
    }
}

fn message_content(resp: &Value) -> Result<String, BackendError> {
    let content = resp
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::Malformed("response has no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content parts even for plain text.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(BackendError::Malformed("message content is not text".into())),
    }
}

impl ChatTransport for OpenAiClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let messages = json!([
            { "role": "system", "content": request.system_prompt },
            { "role": "user", "content": request.user_prompt },
        ]);
        let body = self.chat_body(&request.model_id, messages, request.temperature, request.max_tokens, request.seed);
        message_content(&self.post("chat/completions", &body)?)
    }
}

impl VisionTransport for OpenAiClient {
    fn describe(&self, request: &VisionRequest) -> Result<String, BackendError> {
        let url = self.image_url(&request.source)?;
        let messages = json!([
            { "role": "system", "content": request.system_prompt },
            { "role": "user", "content": [
                { "type": "image_url", "image_url": { "url": url } },
                { "type": "text", "text": request.prompt },
            ]},
        ]);
        let body = self.chat_body(&request.model_id, messages, request.temperature, request.max_tokens, None);
        message_content(&self.post("chat/completions", &body)?)
    }
}

impl EmbedTransport for OpenAiClient {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": request.model_id, "input": request.texts });
        let resp = self.post("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Malformed("embedding response has no data array".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
                let v = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| BackendError::Malformed("embedding is not a numeric array".into()))?;
                Ok((index, v))
            })
            .collect::<Result<_, BackendError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Client for an external open-vocabulary tagging service.
#[derive(Debug, Clone)]
pub struct HttpTagger {
    client: OpenAiClient,
}

impl HttpTagger {
    pub fn new(client: OpenAiClient) -> Self {
        Self { client }
    }
}

impl TagTransport for HttpTagger {
    fn score(&self, request: &TagRequest) -> Result<Vec<f64>, BackendError> {
        let image = self.client.image_url(&request.source)?;
        let body = json!({
            "model": request.model_id,
            "image": image,
            "vocabulary": request.vocabulary,
        });
        let resp = self.client.post("tag", &body)?;
        resp.get("scores")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| BackendError::Malformed("tag response has no numeric scores array".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_mode_reports_unreadable_file() {
        let client = OpenAiClient::new("http://127.0.0.1:9", None, Duration::from_secs(1));
        let req = VisionRequest::new("/definitely/not/here.jpg", "s", "p");
        assert!(matches!(client.describe(&req), Err(BackendError::ImageFetch { .. })));
    }

    #[test]
    fn inline_mode_encodes_data_uri() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        std::fs::write(&p, b"\x89PNG").unwrap();
        let client = OpenAiClient::new("http://x", None, Duration::from_secs(1));
        let url = client.image_url(p.to_str().unwrap()).unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        let locator = client.image_mode(ImageMode::Locator).image_url("https://h/i.jpg").unwrap();
        assert_eq!(locator, "https://h/i.jpg");
    }

    #[test]
    fn content_parts_are_joined() {
        let v = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(message_content(&v).unwrap(), "ab");
        assert!(message_content(&json!({"choices": []})).is_err());
    }
}
