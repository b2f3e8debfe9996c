//! Attribute captioning with a large multimodal model.
//!
//! Person and clothing images are captioned separately against pre-defined
//! attribute schemas. Each query is an in-context-learning request: system
//! prompt, task description, labelled exemplars, then the query image. The
//! model must answer with a JSON object keyed exactly by the schema's
//! attribute names; malformed answers are re-prompted.

pub mod client;
mod icl;
mod prompt;
mod schema;

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::data::CaptionRecord;
use crate::exec::Exec;

pub use client::{ChatMessage, ChatRequest, Clock, FixedClock, FnLmm, LmmClient, MockLmm, ScriptedLmm, SystemClock};
#[cfg(feature = "http")]
pub use client::HttpLmm;
pub use icl::{
    build_icl_request, default_task_description, record_matches_schema, Exemplar, ExemplarSet, IclRequest, ImageRef,
    DEFAULT_SYSTEM_PROMPT,
};
pub use prompt::{
    count_tokens, normalize_attribute_name, parse_overrides, render_main_prompt, Overrides, PromptPair, MAX_PROMPT_TOKENS,
};
pub use schema::{Attribute, AttributeSchema, PromptSlot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptionError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("duplicate attribute name `{0}`")]
    DuplicateAttribute(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("response violated the schema after {attempts} attempts: {last}")]
    ResponseSchemaViolation { attempts: usize, last: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{prompt} prompt has {tokens} tokens, limit is {limit}")]
    TokenBudgetExceeded { prompt: String, tokens: usize, limit: usize },
    #[error("exemplars: {0}")]
    Exemplars(String),
}

/// Retry policy for [`caption_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Re-prompts allowed after a schema-violating answer.
    pub schema_retries: usize,
    /// Re-sends allowed after a transport failure.
    pub transport_retries: usize,
    /// First backoff delay; doubles on each transport retry.
    pub backoff: Duration,
}

impl RetryPolicy {
    pub fn schema_only(retries: usize) -> Self {
        Self {
            schema_retries: retries,
            transport_retries: 0,
            backoff: Duration::ZERO,
        }
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            schema_retries: 2,
            transport_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Pulls the outermost JSON object out of a reply, tolerating code fences
/// and surrounding prose.
fn extract_json_object(reply: &str) -> Option<serde_json::Map<String, Value>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<Value>(&reply[start..=end]).ok()? {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Validates a reply against the schema; returns the captions or a reason.
fn validate_reply(schema: &AttributeSchema, reply: &str) -> Result<std::collections::BTreeMap<String, String>, String> {
    let obj = extract_json_object(reply).ok_or_else(|| "reply is not a JSON object".to_string())?;
    let extra: Vec<&String> = obj.keys().filter(|k| !schema.contains(k)).collect();
    let missing: Vec<&str> = schema.names().filter(|n| !obj.contains_key(*n)).collect();
    if !extra.is_empty() || !missing.is_empty() {
        return Err(format!("keys differ from schema: extra {extra:?}, missing {missing:?}"));
    }
    obj.into_iter()
        .map(|(k, v)| match v {
            Value::String(s) => Ok((k, s.trim().to_string())),
            other => Err(format!("value for `{k}` is not a string: {other}")),
        })
        .collect()
}

fn complete_with_backoff(client: &dyn LmmClient, chat: &ChatRequest, policy: &RetryPolicy) -> Result<String, TransportError> {
    let mut delay = policy.backoff;
    let mut attempt = 0;
    loop {
        match client.complete(chat) {
            Ok(r) => return Ok(r),
            Err(e) if attempt >= policy.transport_retries => return Err(e),
            Err(_) => {
                attempt += 1;
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                delay *= 2;
            }
        }
    }
}

/// Captions the query image of `request`.
pub fn caption_image(
    client: &dyn LmmClient,
    request: &IclRequest,
    policy: &RetryPolicy,
    clock: &dyn Clock,
) -> Result<CaptionRecord, CaptionError> {
    let mut chat = request.to_chat();
    let mut last = String::new();
    for _ in 0..=policy.schema_retries {
        let reply = complete_with_backoff(client, &chat, policy)?;
        match validate_reply(&request.schema, &reply) {
            Ok(captions) => {
                return Ok(CaptionRecord {
                    image_id: request.query_image.id.clone(),
                    subject: request.schema.subject,
                    captions,
                    lmm_model_id: client.model_id(),
                    created_at: clock.now_rfc3339(),
                })
            }
            Err(reason) => {
                chat.messages.push(ChatMessage::text("assistant", reply));
                chat.messages.push(ChatMessage::text(
                    "user",
                    format!("That answer was rejected ({reason}). {}", icl::answer_instruction(&request.schema)),
                ));
                last = reason;
            }
        }
    }
    Err(CaptionError::ResponseSchemaViolation {
        attempts: policy.schema_retries + 1,
        last,
    })
}

/// Captions many requests with at most `max_in_flight` concurrent calls.
/// Results come back in request order.
pub fn caption_batch(
    client: &dyn LmmClient,
    requests: &[IclRequest],
    policy: &RetryPolicy,
    clock: &dyn Clock,
    max_in_flight: usize,
    exec: Exec,
) -> Vec<Result<CaptionRecord, CaptionError>> {
    let run = || exec.map(requests, |r| caption_image(client, r, policy, clock));
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(max_in_flight.max(1)).build() {
            return pool.install(run);
        }
    }
    let _ = max_in_flight;
    run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, Subject};

    fn request() -> IclRequest {
        let schema = AttributeSchema::default_for(Subject::Clothing, Category::LowerBody);
        let record = CaptionRecord {
            image_id: "ex0".into(),
            subject: Subject::Clothing,
            captions: schema.names().map(|n| (n.to_string(), format!("{n} value"))).collect(),
            lmm_model_id: "human".into(),
            created_at: "1970-01-01T00:00:00Z".into(),
        };
        let ex = ExemplarSet::new(vec![Exemplar {
            image: ImageRef {
                id: "ex0".into(),
                url: "data:ex0".into(),
            },
            record,
        }])
        .unwrap();
        build_icl_request(
            &schema,
            &ex,
            &ImageRef {
                id: "q".into(),
                url: "data:q".into(),
            },
        )
        .unwrap()
    }

    const VALID: &str = r#"{"cloth category": "jeans", "material": "denim", "length": "ankle length"}"#;

    #[test]
    fn valid_reply_roundtrips() {
        let c = ScriptedLmm::new(vec![Ok(format!("```json\n{VALID}\n```"))]);
        let r = caption_image(&c, &request(), &RetryPolicy::schema_only(0), &FixedClock::default()).unwrap();
        assert_eq!(r.captions["material"], "denim");
        assert_eq!(r.lmm_model_id, "scripted");
        assert_eq!(r.image_id, "q");
    }

    #[test]
    fn missing_key_twice_then_valid_succeeds_with_two_retries() {
        let bad = r#"{"cloth category": "jeans", "material": "denim"}"#;
        let c = ScriptedLmm::new(vec![Ok(bad.into()), Ok(bad.into()), Ok(VALID.into())]);
        assert!(caption_image(&c, &request(), &RetryPolicy::schema_only(2), &FixedClock::default()).is_ok());
        assert_eq!(c.calls(), 3);

        let c = ScriptedLmm::new(vec![Ok(bad.into()), Ok(bad.into()), Ok(VALID.into())]);
        assert!(matches!(
            caption_image(&c, &request(), &RetryPolicy::schema_only(1), &FixedClock::default()),
            Err(CaptionError::ResponseSchemaViolation { attempts: 2, .. })
        ));
    }

    #[test]
    fn prose_is_a_violation() {
        let c = ScriptedLmm::new(vec![Ok("A pair of blue jeans.".into()); 4]);
        assert!(matches!(
            caption_image(&c, &request(), &RetryPolicy::schema_only(3), &FixedClock::default()),
            Err(CaptionError::ResponseSchemaViolation { attempts: 4, .. })
        ));
    }

    #[test]
    fn non_string_values_are_violations() {
        let c = ScriptedLmm::new(vec![Ok(r#"{"cloth category": 1, "material": "denim", "length": "x"}"#.into())]);
        assert!(caption_image(&c, &request(), &RetryPolicy::schema_only(0), &FixedClock::default()).is_err());
    }

    #[test]
    fn transport_errors_retry_then_surface() {
        let policy = RetryPolicy {
            schema_retries: 0,
            transport_retries: 2,
            backoff: Duration::ZERO,
        };
        let c = ScriptedLmm::new(vec![Err(TransportError("503".into())), Err(TransportError("503".into())), Ok(VALID.into())]);
        assert!(caption_image(&c, &request(), &policy, &FixedClock::default()).is_ok());
        let c = ScriptedLmm::new(vec![Err(TransportError("503".into())); 3]);
        assert!(matches!(
            caption_image(&c, &request(), &policy, &FixedClock::default()),
            Err(CaptionError::Transport(_))
        ));
    }

    #[test]
    fn batch_preserves_order() {
        let reqs: Vec<IclRequest> = (0..6)
            .map(|i| {
                let mut r = request();
                r.query_image = ImageRef {
                    id: format!("q{i}"),
                    url: format!("data:q{i}"),
                };
                r
            })
            .collect();
        let out = caption_batch(&MockLmm::new(), &reqs, &RetryPolicy::default(), &FixedClock::default(), 2, Exec::Parallel);
        let ids: Vec<String> = out.into_iter().map(|r| r.unwrap().image_id).collect();
        assert_eq!(ids, ["q0", "q1", "q2", "q3", "q4", "q5"]);
    }
}
