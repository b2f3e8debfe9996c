//! Main and reference prompt rendering.
//!
//! Main prompt layout, with captions taken in schema order:
//!
//! ```text
//! a {person subject captions, space-joined} wears {clothing captions}, {person body captions}, with {person closing captions}.
//! ```
//!
//! The `, with ...` clause is dropped when the person schema has no closing
//! attribute. The reference prompt is the clothing captions joined by `", "`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AttributeSchema, CaptionError, PromptSlot};
use crate::captioner::icl::record_matches_schema;
use crate::data::CaptionRecord;

/// Token limit of the text encoder.
pub const MAX_PROMPT_TOKENS: usize = 77;

/// Attribute name → replacement caption.
pub type Overrides = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub reference_prompt: String,
    pub main_prompt: String,
    pub token_count_main: usize,
    pub token_count_ref: usize,
}

/// Whitespace word count; stands in for a subword tokenizer.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Accepts `tucking_style` for `tucking style`.
pub fn normalize_attribute_name(name: &str) -> String {
    name.trim().replace('_', " ")
}

/// Parses `name=value` pairs as given on the command line.
pub fn parse_overrides<'a>(items: impl IntoIterator<Item = &'a str>) -> Result<Overrides, CaptionError> {
    let mut out = Overrides::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CaptionError::UnknownAttribute(format!("override `{item}` is not name=value")))?;
        out.insert(normalize_attribute_name(k), v.trim().to_string());
    }
    Ok(out)
}

fn caption<'a>(record: &'a CaptionRecord, overrides: &'a Overrides, name: &str) -> &'a str {
    overrides
        .get(name)
        .or_else(|| record.captions.get(name))
        .map(String::as_str)
        .unwrap_or("")
}

/// Renders both prompts, applying `overrides` on top of the LMM captions.
pub fn render_main_prompt(
    person_schema: &AttributeSchema,
    person: &CaptionRecord,
    clothing_schema: &AttributeSchema,
    clothing: &CaptionRecord,
    overrides: &Overrides,
) -> Result<PromptPair, CaptionError> {
    record_matches_schema(person_schema, person)?;
    record_matches_schema(clothing_schema, clothing)?;
    let overrides: Overrides = overrides
        .iter()
        .map(|(k, v)| (normalize_attribute_name(k), v.clone()))
        .collect();
    for k in overrides.keys() {
        if !person_schema.contains(k) && !clothing_schema.contains(k) {
            return Err(CaptionError::UnknownAttribute(k.clone()));
        }
    }

    let by_slot = |slot: PromptSlot| -> Vec<&str> {
        person_schema
            .attributes
            .iter()
            .filter(|a| a.slot == slot)
            .map(|a| caption(person, &overrides, &a.name))
            .collect()
    };
    let clothing_caps: Vec<&str> = clothing_schema
        .names()
        .map(|n| caption(clothing, &overrides, n))
        .collect();

    let mut body: Vec<&str> = clothing_caps.clone();
    body.extend(by_slot(PromptSlot::Body));
    let mut main = format!("a {} wears {}", by_slot(PromptSlot::Subject).join(" "), body.join(", "));
    let closing = by_slot(PromptSlot::Closing);
    if !closing.is_empty() {
        main.push_str(", with ");
        main.push_str(&closing.join(" and "));
    }
    main.push('.');
    let reference = clothing_caps.join(", ");

    let pair = PromptPair {
        token_count_main: count_tokens(&main),
        token_count_ref: count_tokens(&reference),
        main_prompt: main,
        reference_prompt: reference,
    };
    for (which, n) in [("main", pair.token_count_main), ("reference", pair.token_count_ref)] {
        if n > MAX_PROMPT_TOKENS {
            return Err(CaptionError::TokenBudgetExceeded {
                prompt: which.into(),
                tokens: n,
                limit: MAX_PROMPT_TOKENS,
            });
        }
    }
    Ok(pair)
}
