//! Chat-completions request model and LMM client implementations.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::TransportError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: &str, text: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }
}

/// Provider-neutral chat request. Serializes to the chat-completions body
/// minus the `model` field, which the client fills in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub response_format: Value,
    /// Id of the image being captioned; never sent over the wire.
    #[serde(skip)]
    pub query_image_id: String,
}

impl ChatRequest {
    /// URL of the last image in the conversation.
    pub fn query_image_url(&self) -> Option<&str> {
        self.messages
            .iter()
            .flat_map(|m| m.content.iter())
            .filter_map(|p| match p {
                ContentPart::ImageUrl { image_url } => Some(image_url.url.as_str()),
                _ => None,
            })
            .next_back()
    }

    /// Keys demanded by the response JSON schema, in order.
    pub fn response_keys(&self) -> Vec<String> {
        self.schema_properties()
            .map(|props| props.keys().cloned().collect())
            .unwrap_or_default()
    }

    fn schema_properties(&self) -> Option<&Map<String, Value>> {
        self.response_format
            .pointer("/json_schema/schema/properties")
            .and_then(Value::as_object)
    }

    /// Example values listed for `key` in the response schema.
    pub fn examples_for(&self, key: &str) -> Vec<String> {
        self.schema_properties()
            .and_then(|p| p.get(key))
            .and_then(|v| v.get("examples"))
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }
}

/// A large multimodal model reachable through a chat interface.
pub trait LmmClient: Send + Sync {
    fn model_id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

pub(crate) fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Deterministic offline LMM.
///
/// Answers from a fixture table keyed by image id when present; otherwise
/// picks, for every demanded key, one of the schema's example values by
/// hashing the query image URL with the key. Answers therefore depend only
/// on the query image content and the schema.
#[derive(Debug, Clone, Default)]
pub struct MockLmm {
    pub model: String,
    pub fixtures: HashMap<String, Map<String, Value>>,
}

impl MockLmm {
    pub fn new() -> Self {
        Self {
            model: "mock-lmm-v1".into(),
            fixtures: HashMap::new(),
        }
    }

    pub fn with_fixtures(fixtures: HashMap<String, Map<String, Value>>) -> Self {
        Self {
            fixtures,
            ..Self::new()
        }
    }

    /// Fixture file: `{"<image id>": {"<attribute>": "<caption>", ...}, ...}`.
    pub fn from_fixture_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::with_fixtures(serde_json::from_str(text)?))
    }
}

impl LmmClient for MockLmm {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        if let Some(f) = self.fixtures.get(&request.query_image_id) {
            return Ok(Value::Object(f.clone()).to_string());
        }
        let url = request.query_image_url().unwrap_or_default();
        let mut out = Map::new();
        for key in request.response_keys() {
            let examples = request.examples_for(&key);
            let v = if examples.is_empty() {
                "unspecified".to_string()
            } else {
                examples[(stable_hash(&[url, &key]) % examples.len() as u64) as usize].clone()
            };
            out.insert(key, Value::String(v));
        }
        Ok(Value::Object(out).to_string())
    }
}

/// Replays a fixed script of responses, one per call.
#[derive(Debug, Default)]
pub struct ScriptedLmm {
    script: Mutex<VecDeque<Result<String, TransportError>>>,
    calls: Mutex<usize>,
}

impl ScriptedLmm {
    pub fn new(script: Vec<Result<String, TransportError>>) -> Self {
        Self {
            script: Mutex::new(script.into()),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl LmmClient for ScriptedLmm {
    fn model_id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        *self.calls.lock().unwrap() += 1;
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError("script exhausted".into())))
    }
}

/// Client backed by a closure; handy for judges in tests.
pub struct FnLmm<F> {
    pub model: String,
    pub f: F,
}

impl<F> LmmClient for FnLmm<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (self.f)(request)
    }
}

/// OpenAI-compatible chat-completions client over HTTPS.
#[cfg(feature = "http")]
#[derive(Debug, Clone)]
pub struct HttpLmm {
    pub endpoint: String,
    pub model: String,
    api_key: String,
    pub timeout: std::time::Duration,
}

#[cfg(feature = "http")]
impl HttpLmm {
    /// Reads the API key from `key_env`.
    pub fn from_env(endpoint: &str, model: &str, key_env: &str) -> Result<Self, TransportError> {
        let api_key = std::env::var(key_env).map_err(|_| TransportError(format!("environment variable {key_env} is not set")))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            timeout: std::time::Duration::from_secs(120),
        })
    }

    /// Request body as sent over the wire.
    pub fn body(&self, request: &ChatRequest) -> Value {
        let mut body = serde_json::to_value(request).expect("request serializes");
        body["model"] = serde_json::json!(self.model);
        body["temperature"] = serde_json::json!(0);
        body
    }
}

#[cfg(feature = "http")]
impl LmmClient for HttpLmm {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.body(request))
            .map_err(|e| TransportError(e.to_string()))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError(format!("no message content in response: {v}")))
    }
}

/// Timestamp source for caption records.
pub trait Clock: Send + Sync {
    fn now_rfc3339(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_rfc3339(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Default for FixedClock {
    fn default() -> Self {
        FixedClock("1970-01-01T00:00:00Z".into())
    }
}

impl Clock for FixedClock {
    fn now_rfc3339(&self) -> String {
        self.0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn content_parts_use_chat_completions_shape() {
        let m = ChatMessage {
            role: "user".into(),
            content: vec![
                ContentPart::Text { text: "hi".into() },
                ContentPart::ImageUrl {
                    image_url: ImageUrl { url: "data:x".into() },
                },
            ],
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(
            v,
            json!({"role": "user", "content": [
                {"type": "text", "text": "hi"},
                {"type": "image_url", "image_url": {"url": "data:x"}}
            ]})
        );
    }

    #[test]
    fn scripted_client_replays_then_fails() {
        let c = ScriptedLmm::new(vec![Ok("a".into())]);
        let req = ChatRequest {
            messages: vec![],
            response_format: Value::Null,
            query_image_id: String::new(),
        };
        assert_eq!(c.complete(&req).unwrap(), "a");
        assert!(c.complete(&req).is_err());
        assert_eq!(c.calls(), 2);
    }

    #[cfg(feature = "http")]
    #[test]
    fn http_body_carries_model_and_format() {
        std::env::set_var("TRYON_TEST_KEY", "k");
        let c = HttpLmm::from_env("http://localhost:1/v1/chat/completions", "gpt-x", "TRYON_TEST_KEY").unwrap();
        let req = ChatRequest {
            messages: vec![ChatMessage::text("user", "x")],
            response_format: json!({"type": "json_object"}),
            query_image_id: "id".into(),
        };
        let b = c.body(&req);
        assert_eq!(b["model"], "gpt-x");
        assert_eq!(b["response_format"]["type"], "json_object");
        assert!(b.get("query_image_id").is_none());
        assert!(c.complete(&req).is_err());
    }
}
