//! Plumbing shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;
use tryon_core::captioner::{
    build_icl_request, caption_batch, parse_overrides, render_main_prompt, AttributeSchema, CaptionError, Clock, Exemplar, ExemplarSet,
    FixedClock, HttpLmm, IclRequest, ImageRef, LmmClient, MockLmm, Overrides, PromptPair, RetryPolicy, SystemClock,
};
use tryon_core::data::synthetic::{generate_samples, SyntheticConfig};
use tryon_core::data::{cache_captions, load_sample, lookup_captions, CaptionRecord, Category, DataError, DatasetIndex, Split, Subject, TryOnSample};
use tryon_core::diffusion::{DiffusionError, TryOnModel};
use tryon_core::eval::EvalError;
use tryon_core::exec::Exec;
use tryon_core::mask::MaskError;
use tryon_core::pmg::PmgError;
use tryon_core::raster::RasterError;

use crate::config::{Backend, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Pmg(#[from] PmgError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for everything at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Entries of the configured split, truncated to `data.limit`.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<TryOnSample>, CliError> {
    let pairing = if split == cfg.data.split { cfg.data.pairing } else { tryon_core::data::Pairing::Paired };
    let index = DatasetIndex::build(&cfg.data.root, split, pairing)?;
    let n = if cfg.data.limit == 0 { index.len() } else { cfg.data.limit.min(index.len()) };
    (0..n).map(|i| load_sample(&index, i).map_err(CliError::from)).collect()
}

pub fn lmm_client(cfg: &RunConfig) -> Result<Box<dyn LmmClient>, CliError> {
    let c = &cfg.captioner;
    match c.backend {
        Backend::Mock => match &c.fixture {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                let mock = MockLmm::from_fixture_json(&text).map_err(|e| {
                    CliError::Config(ConfigError::Key {
                        key: "captioner.fixture".into(),
                        message: format!("{}: {e}", p.display()),
                    })
                })?;
                Ok(Box::new(mock))
            }
            None => Ok(Box::new(MockLmm::new())),
        },
        Backend::Http => Ok(Box::new(
            HttpLmm::from_env(&c.endpoint, &c.model_id, &c.api_key_env).map_err(CaptionError::from)?,
        )),
    }
}

pub fn clock(cfg: &RunConfig) -> Box<dyn Clock> {
    if cfg.captioner.timestamp.is_empty() {
        Box::new(SystemClock)
    } else {
        Box::new(FixedClock(cfg.captioner.timestamp.clone()))
    }
}

pub fn retry_policy(cfg: &RunConfig) -> RetryPolicy {
    RetryPolicy {
        schema_retries: cfg.captioner.schema_retries,
        transport_retries: cfg.captioner.transport_retries,
        backoff: Duration::from_millis(cfg.captioner.backoff_ms),
    }
}

/// Seed of the built-in exemplar pool; kept apart from any dataset seed.
const EXEMPLAR_SEED: u64 = 0x0e8e_3b1a;

/// Exemplars for `schema`: `<exemplar_dir>/<subject>_<category>/` when
/// configured, else synthetic samples captioned from their ground truth.
pub fn exemplars_for(cfg: &RunConfig, schema: &AttributeSchema) -> Result<ExemplarSet, CliError> {
    if let Some(dir) = &cfg.captioner.exemplar_dir {
        let sub = dir.join(format!("{}_{}", schema.subject.as_str(), schema.category.as_str()));
        return Ok(ExemplarSet::load_dir(&sub)?);
    }
    let samples = generate_samples(&SyntheticConfig {
        count: cfg.captioner.exemplar_count.max(1),
        seed: EXEMPLAR_SEED,
        scale: 1,
        categories: vec![schema.category],
    });
    let exemplars = samples
        .iter()
        .enumerate()
        .map(|(i, (s, truth))| {
            let id = format!("exemplar-{}-{i}", schema.subject.as_str());
            let img = match schema.subject {
                Subject::Person => &s.person,
                Subject::Clothing => &s.clothing,
            };
            Exemplar {
                image: ImageRef::from_raster(id.clone(), img),
                record: CaptionRecord {
                    image_id: id,
                    subject: schema.subject,
                    captions: truth.captions(schema.subject),
                    lmm_model_id: "synthetic-truth".into(),
                    created_at: "1970-01-01T00:00:00Z".into(),
                },
            }
        })
        .collect();
    Ok(ExemplarSet::new(exemplars)?)
}

/// Id under which an image is sent to the LMM (and keyed in mock fixtures).
pub fn query_id(split: Split, subject: Subject, id: &str) -> String {
    format!("{}/{}/{}", split.as_str(), subject.as_str(), id)
}

/// Id under which captions are cached.
pub fn record_id(split: Split, id: &str) -> String {
    format!("{}/{}", split.as_str(), id)
}

pub struct Captions {
    pub person: CaptionRecord,
    pub clothing: CaptionRecord,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CaptionStats {
    pub cache_hits: usize,
    pub lmm_calls: usize,
}

pub fn caption_store(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("captions.jsonl")
}

/// Person and clothing captions for every sample, served from the caption
/// store when present and otherwise requested from the LMM and stored.
pub fn caption_samples(
    cfg: &RunConfig,
    split: Split,
    samples: &[TryOnSample],
    exec: Exec,
) -> Result<(Vec<Captions>, CaptionStats), CliError> {
    let store = caption_store(cfg);
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let client = lmm_client(cfg)?;
    let clock = clock(cfg);
    let policy = retry_policy(cfg);
    let mut schemas: BTreeMap<(Subject, Category), (AttributeSchema, ExemplarSet)> = BTreeMap::new();
    let mut stats = CaptionStats::default();

    let mut found: Vec<[Option<CaptionRecord>; 2]> = Vec::new();
    let mut todo: Vec<(usize, usize, IclRequest)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let mut pair = [None, None];
        for (k, (subject, id, img)) in [
            (Subject::Person, &s.person_id, &s.person),
            (Subject::Clothing, &s.clothing_id, &s.clothing),
        ]
        .into_iter()
        .enumerate()
        {
            if let Some(r) = lookup_captions(&record_id(split, id), subject, &store)? {
                stats.cache_hits += 1;
                pair[k] = Some(r);
                continue;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = schemas.entry((subject, s.category)) {
                let schema = AttributeSchema::default_for(subject, s.category);
                let ex = exemplars_for(cfg, &schema)?;
                e.insert((schema, ex));
            }
            let (schema, ex) = &schemas[&(subject, s.category)];
            let req = build_icl_request(schema, ex, &ImageRef::from_raster(query_id(split, subject, id), img))?;
            todo.push((i, k, req));
        }
        found.push(pair);
    }

    let requests: Vec<IclRequest> = todo.iter().map(|(_, _, r)| r.clone()).collect();
    let results = caption_batch(client.as_ref(), &requests, &policy, clock.as_ref(), cfg.captioner.max_in_flight, exec);
    stats.lmm_calls = results.len();
    for ((i, k, _), res) in todo.into_iter().zip(results) {
        let mut rec = res?;
        let s = &samples[i];
        rec.image_id = record_id(split, if k == 0 { &s.person_id } else { &s.clothing_id });
        // The same garment can appear in several pairs; store it once.
        let subject = rec.subject;
        if lookup_captions(&rec.image_id, subject, &store)?.is_none() {
            cache_captions(&rec, &store)?;
        }
        found[i][k] = Some(rec);
    }
    let out = found
        .into_iter()
        .map(|[p, c]| Captions {
            person: p.expect("every person is captioned"),
            clothing: c.expect("every garment is captioned"),
        })
        .collect();
    Ok((out, stats))
}

pub fn overrides(cfg: &RunConfig) -> Result<Overrides, CliError> {
    Ok(parse_overrides(cfg.tryon.overrides.iter().map(String::as_str))?)
}

pub fn prompts_for(sample: &TryOnSample, caps: &Captions, overrides: &Overrides) -> Result<PromptPair, CliError> {
    Ok(render_main_prompt(
        &AttributeSchema::default_for(Subject::Person, sample.category),
        &caps.person,
        &AttributeSchema::default_for(Subject::Clothing, sample.category),
        &caps.clothing,
        overrides,
    )?)
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("model.ckpt")
}

/// The configured checkpoint, else `<output_dir>/model.ckpt` if present,
/// else a fresh model. Returns the model and a description of its source.
pub fn load_model(cfg: &RunConfig) -> Result<(TryOnModel, String), CliError> {
    if let Some(p) = &cfg.tryon.checkpoint {
        return Ok((TryOnModel::load(p)?, p.display().to_string()));
    }
    let default = checkpoint_path(cfg);
    if default.is_file() {
        return Ok((TryOnModel::load(&default)?, "model.ckpt".into()));
    }
    Ok((TryOnModel::new(cfg.model)?, "fresh".into()))
}
