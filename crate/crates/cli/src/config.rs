//! Run configuration: a TOML file plus `key.path=value` overrides.
//!
//! Every key has a default, so an empty file (or no file) is a valid
//! configuration. Unknown keys are rejected with their full path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};
use tryon_core::data::{Category, Pairing, ParseLabel, Split};
use tryon_core::diffusion::{ModelConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
}

fn key_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Every subcommand writes below this directory. Default `out`.
    pub output_dir: PathBuf,
    /// Seed for sampling noise and mask draws. Default 0.
    pub seed: u64,
    /// Worker threads for batch work; 1 runs everything sequentially. Default 1.
    pub workers: usize,
    pub data: DataConfig,
    pub synthetic: SyntheticSection,
    pub captioner: CaptionerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tryon: TryonConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 1,
            data: DataConfig::default(),
            synthetic: SyntheticSection::default(),
            captioner: CaptionerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tryon: TryonConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root holding `train/` and `test/`. Default `data`.
    pub root: PathBuf,
    /// Split read by caption, build-masks, tryon and evaluate. Default `test`.
    pub split: Split,
    /// Split read by train-toy. Default `train`.
    pub train_split: Split,
    /// Pair list to read. Default `paired`.
    pub pairing: Pairing,
    /// Use only the first `limit` entries; 0 means all. Default 0.
    pub limit: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            split: Split::Test,
            train_split: Split::Train,
            pairing: Pairing::Paired,
            limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    /// Samples per split. Default 8.
    pub count: usize,
    /// Integer upscale of the 64x48 canvas. Default 1.
    pub scale: usize,
    /// Categories drawn per sample. Default `["upper_body"]`.
    pub categories: Vec<Category>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            count: 8,
            scale: 1,
            categories: vec![Category::UpperBody],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionerConfig {
    /// `mock` (offline, deterministic) or `http`. Default `mock`.
    pub backend: Backend,
    /// Mock answers keyed by query image id. Default none.
    pub fixture: Option<PathBuf>,
    /// Chat-completions URL for the `http` backend.
    pub endpoint: String,
    /// Model id sent to the endpoint. Default `gpt-4o`.
    pub model_id: String,
    /// Environment variable holding the API key. Default `OPENAI_API_KEY`.
    pub api_key_env: String,
    /// Exemplar root with one `<subject>_<category>` folder per schema;
    /// none uses built-in synthetic exemplars.
    pub exemplar_dir: Option<PathBuf>,
    /// Built-in exemplars per schema. Default 3.
    pub exemplar_count: usize,
    /// Re-prompts after a schema-violating reply. Default 2.
    pub schema_retries: usize,
    /// Retries after a transport failure. Default 3.
    pub transport_retries: usize,
    /// First backoff delay in milliseconds, doubled per retry. Default 500.
    pub backoff_ms: u64,
    /// Concurrent LMM calls when workers > 1. Default 4.
    pub max_in_flight: usize,
    /// Timestamp stamped on new records; empty uses the system clock.
    /// Default `1970-01-01T00:00:00Z` so reruns are byte-identical.
    pub timestamp: String,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            fixture: None,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_id: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            exemplar_dir: None,
            exemplar_count: 3,
            schema_retries: 2,
            transport_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            timestamp: "1970-01-01T00:00:00Z".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TryonConfig {
    /// Prompt-aware mask generation; without it the coarse mask is inpainted. Default true.
    pub pmg: bool,
    /// Stop fraction of the coarse pass, in [0, 1). Default 0.5.
    pub sigma: f64,
    /// Denoising steps of a full pass. Default 30.
    pub steps: usize,
    /// Paste unmasked regions back from the person image. Default true.
    pub composite: bool,
    /// Segmenter backend id. Default `threshold`.
    pub segmenter: String,
    /// Region-of-interest labels; empty means the garment label. Default empty.
    pub target_classes: Vec<ParseLabel>,
    /// Caption overrides, `name=value`. Default empty.
    pub overrides: Vec<String>,
    /// Model checkpoint; none uses `<output_dir>/model.ckpt` when present,
    /// else a fresh model from `[model]`.
    pub checkpoint: Option<PathBuf>,
    /// Also write refined masks and coarse estimates. Default true.
    pub save_masks: bool,
}

impl Default for TryonConfig {
    fn default() -> Self {
        Self {
            pmg: true,
            sigma: 0.5,
            steps: 30,
            composite: true,
            segmenter: "threshold".into(),
            target_classes: Vec::new(),
            overrides: Vec::new(),
            checkpoint: None,
            save_masks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Person attribute held fixed. Default `tucking style`.
    pub attribute: String,
    /// Caption the attribute is set to. Default `untucked`.
    pub target: String,
    /// Second caption for the diversity comparison. Default `fully tucked in`.
    pub alternate: String,
    /// Reference labels (a `truth_<split>.json` from gen-synthetic) for STS. Default none.
    pub truth: Option<PathBuf>,
    /// Also run the stop-fraction sweep. Default false.
    pub sigma_sweep: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            attribute: "tucking style".into(),
            target: "untucked".into(),
            alternate: "fully tucked in".into(),
            truth: None,
            sigma_sweep: false,
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a plain string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `key` (dotted path) in `table`, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(key_err(key, "malformed key path"));
    }
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| key_err(&parts[..=i].join("."), "is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order, then checks
    /// value ranges.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                toml::from_str::<Table>(&text).map_err(|e| ConfigError::Read {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner().to_string();
            let key = match unknown_field(&inner) {
                Some(f) if key == "." => f,
                Some(f) if key != f && !key.ends_with(&format!(".{f}")) => format!("{key}.{f}"),
                _ => key,
            };
            ConfigError::Key { key, message: inner }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.tryon.sigma) {
            return Err(key_err("tryon.sigma", format!("{} is outside [0, 1)", self.tryon.sigma)));
        }
        if self.tryon.steps < 2 {
            return Err(key_err("tryon.steps", "must be at least 2"));
        }
        if self.train.batch_size == 0 {
            return Err(key_err("train.batch_size", "must be positive"));
        }
        if self.synthetic.scale == 0 {
            return Err(key_err("synthetic.scale", "must be positive"));
        }
        if self.captioner.max_in_flight == 0 {
            return Err(key_err("captioner.max_in_flight", "must be positive"));
        }
        if self.tryon.segmenter != "threshold" {
            return Err(key_err("tryon.segmenter", format!("unknown backend `{}`", self.tryon.segmenter)));
        }
        for o in &self.tryon.overrides {
            if !o.contains('=') {
                return Err(key_err("tryon.overrides", format!("`{o}` is not name=value")));
            }
        }
        Ok(())
    }

    /// This configuration as TOML, every key included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Extracts the field name from serde's "unknown field `x`" message.
fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::load(None, &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_nested_key_named() {
        let err = RunConfig::load(None, &[("tryon.sigmaa".into(), Value::Float(0.5))]).unwrap_err();
        match err {
            ConfigError::Key { key, .. } => assert_eq!(key, "tryon.sigmaa"),
            other => panic!("{other}"),
        }
        let err = RunConfig::load(None, &[("bogus".into(), Value::Integer(1))]).unwrap_err();
        assert!(matches!(err, ConfigError::Key { key, .. } if key == "bogus"));
    }

    #[test]
    fn wrong_type_names_key() {
        let err = RunConfig::load(None, &[("tryon.steps".into(), parse_value("\"many\""))]).unwrap_err();
        assert!(matches!(err, ConfigError::Key { key, .. } if key == "tryon.steps"));
    }

    #[test]
    fn overrides_win_and_parse() {
        let cfg = RunConfig::load(
            None,
            &[
                ("tryon.sigma".into(), parse_value("0.3")),
                ("data.root".into(), parse_value("/tmp/x")),
                ("tryon.overrides".into(), parse_value(r#"["tucking style=untucked"]"#)),
            ],
        )
        .unwrap();
        assert_eq!(cfg.tryon.sigma, 0.3);
        assert_eq!(cfg.data.root, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.tryon.overrides, vec!["tucking style=untucked"]);
    }

    #[test]
    fn range_checked() {
        let err = RunConfig::load(None, &[("tryon.sigma".into(), Value::Float(1.0))]).unwrap_err();
        assert!(matches!(err, ConfigError::Key { key, .. } if key == "tryon.sigma"));
    }

    #[test]
    fn default_toml_roundtrips() {
        let text = RunConfig::default().to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
