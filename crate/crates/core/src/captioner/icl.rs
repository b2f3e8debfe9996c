//! In-context-learning request assembly.

use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde_json::{json, Map, Value};

use super::client::{ChatMessage, ChatRequest, ContentPart, ImageUrl};
use super::{AttributeSchema, CaptionError};
use crate::data::CaptionRecord;
use crate::raster::RgbImage;

/// An image as the LMM sees it: an id plus a URL (usually a PNG data URL).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub id: String,
    pub url: String,
}

impl ImageRef {
    pub fn from_raster(id: impl Into<String>, img: &RgbImage) -> Self {
        Self::from_png_bytes(id, &img.png_bytes())
    }

    pub fn from_png_bytes(id: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            id: id.into(),
            url: format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)),
        }
    }

    pub fn from_png_file(path: &Path) -> Result<Self, CaptionError> {
        let bytes = fs::read(path).map_err(|e| CaptionError::Exemplars(format!("{}: {e}", path.display())))?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self::from_png_bytes(id, &bytes))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub image: ImageRef,
    pub record: CaptionRecord,
}

/// Human-labelled demonstrations, all under one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn new(exemplars: Vec<Exemplar>) -> Result<Self, CaptionError> {
        if exemplars.is_empty() {
            return Err(CaptionError::Exemplars("an exemplar set needs at least one exemplar".into()));
        }
        Ok(Self { exemplars })
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Loads `<dir>/<id>.png` + `<dir>/<id>.json` pairs (the JSON is a
    /// [`CaptionRecord`]), sorted by id.
    pub fn load_dir(dir: &Path) -> Result<Self, CaptionError> {
        let mut jsons: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CaptionError::Exemplars(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        jsons.sort();
        let mut exemplars = Vec::new();
        for j in jsons {
            let text = fs::read_to_string(&j).map_err(|e| CaptionError::Exemplars(format!("{}: {e}", j.display())))?;
            let record: CaptionRecord =
                serde_json::from_str(&text).map_err(|e| CaptionError::Exemplars(format!("{}: {e}", j.display())))?;
            let image = ImageRef::from_png_file(&j.with_extension("png"))?;
            exemplars.push(Exemplar { image, record });
        }
        Self::new(exemplars)
    }

    /// Writes the set in the layout `load_dir` reads.
    pub fn save_dir(&self, dir: &Path, images: &[RgbImage]) -> Result<(), CaptionError> {
        fs::create_dir_all(dir).map_err(|e| CaptionError::Exemplars(e.to_string()))?;
        for (ex, img) in self.exemplars.iter().zip(images) {
            let stem = dir.join(&ex.image.id);
            img.save_png(&stem.with_extension("png"))
                .map_err(|e| CaptionError::Exemplars(e.to_string()))?;
            let text = serde_json::to_string_pretty(&ex.record).expect("record serializes");
            fs::write(stem.with_extension("json"), text).map_err(|e| CaptionError::Exemplars(e.to_string()))?;
        }
        Ok(())
    }
}

/// Everything the LMM is conditioned on for one captioning query.
#[derive(Debug, Clone, PartialEq)]
pub struct IclRequest {
    pub system_prompt: String,
    pub task_description: String,
    pub exemplars: ExemplarSet,
    pub query_image: ImageRef,
    pub schema: AttributeSchema,
}

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a fashion annotation assistant. You describe people and garments \
using short, concrete phrases and you always answer with a single JSON object.";

/// Task description listing each attribute with its meaning and sample values.
pub fn default_task_description(schema: &AttributeSchema) -> String {
    let what = match schema.subject {
        crate::data::Subject::Person => "the person in the image",
        crate::data::Subject::Clothing => "the garment in the image",
    };
    let mut s = format!(
        "Describe {what} ({} category) using exactly these attributes. Only describe the listed attributes; \
do not mention anything else.\n",
        schema.category.as_str()
    );
    for a in &schema.attributes {
        s.push_str(&format!("- {}: {} (e.g. {})\n", a.name, a.description, a.example_values.join(", ")));
    }
    s
}

fn expected_json(schema: &AttributeSchema, record: &CaptionRecord) -> String {
    let mut m = Map::new();
    for name in schema.names() {
        m.insert(name.to_string(), Value::String(record.captions[name].clone()));
    }
    Value::Object(m).to_string()
}

pub(crate) fn answer_instruction(schema: &AttributeSchema) -> String {
    let keys: Vec<String> = schema.names().map(|n| format!("\"{n}\"")).collect();
    format!(
        "Caption this image. Answer with a JSON object whose keys are exactly: {}. Every value is a short string.",
        keys.join(", ")
    )
}

fn response_format(schema: &AttributeSchema) -> Value {
    let mut props = Map::new();
    for a in &schema.attributes {
        props.insert(a.name.clone(), json!({"type": "string", "examples": a.example_values}));
    }
    json!({
        "type": "json_schema",
        "json_schema": {
            "name": schema.id().replace('/', "_"),
            "strict": true,
            "schema": {
                "type": "object",
                "properties": props,
                "required": schema.names().collect::<Vec<_>>(),
                "additionalProperties": false
            }
        }
    })
}

/// Checks that `record` was labelled under `schema`.
pub fn record_matches_schema(schema: &AttributeSchema, record: &CaptionRecord) -> Result<(), CaptionError> {
    if record.subject != schema.subject {
        return Err(CaptionError::SchemaMismatch(format!(
            "record {} is a {} record, schema is {}",
            record.image_id,
            record.subject.as_str(),
            schema.id()
        )));
    }
    let extra: Vec<&String> = record.captions.keys().filter(|k| !schema.contains(k)).collect();
    let missing: Vec<&str> = schema.names().filter(|n| !record.captions.contains_key(*n)).collect();
    if !extra.is_empty() || !missing.is_empty() {
        return Err(CaptionError::SchemaMismatch(format!(
            "record {}: extra {extra:?}, missing {missing:?} for schema {}",
            record.image_id,
            schema.id()
        )));
    }
    Ok(())
}

/// Assembles an ICL request with the default system prompt and task text.
pub fn build_icl_request(schema: &AttributeSchema, exemplars: &ExemplarSet, image: &ImageRef) -> Result<IclRequest, CaptionError> {
    for ex in &exemplars.exemplars {
        record_matches_schema(schema, &ex.record)?;
    }
    Ok(IclRequest {
        system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        task_description: default_task_description(schema),
        exemplars: exemplars.clone(),
        query_image: image.clone(),
        schema: schema.clone(),
    })
}

impl IclRequest {
    /// Chat transcript: system prompt, task description, one
    /// (image, expected JSON) turn pair per exemplar, then the query image.
    pub fn to_chat(&self) -> ChatRequest {
        let mut messages = vec![
            ChatMessage::text("system", &self.system_prompt),
            ChatMessage::text("user", &self.task_description),
        ];
        let instruction = answer_instruction(&self.schema);
        let image_turn = |img: &ImageRef| ChatMessage {
            role: "user".into(),
            content: vec![
                ContentPart::ImageUrl {
                    image_url: ImageUrl { url: img.url.clone() },
                },
                ContentPart::Text {
                    text: instruction.clone(),
                },
            ],
        };
        for ex in &self.exemplars.exemplars {
            messages.push(image_turn(&ex.image));
            messages.push(ChatMessage::text("assistant", expected_json(&self.schema, &ex.record)));
        }
        messages.push(image_turn(&self.query_image));
        ChatRequest {
            messages,
            response_format: response_format(&self.schema),
            query_image_id: self.query_image.id.clone(),
        }
    }

    /// Canonical JSON serialization of the chat transcript.
    pub fn serialize(&self) -> String {
        serde_json::to_string(&self.to_chat()).expect("request serializes")
    }
}
