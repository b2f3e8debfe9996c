//! Prompt-aware mask generation.
//!
//! Inference runs twice. A coarse pass inpaints the coarse mask and stops
//! early at stop fraction σ, returning the decoded ẑ₀ estimate. A segmenter
//! labels that estimate; its target-class pixels are unioned with the fine
//! mask, hand and foot pixels are removed, and the result is the inpainting
//! mask of a full-length final pass. Both passes share the same prompts.

mod segment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::PromptPair;
use crate::data::{ParseLabel, TryOnSample};
use crate::diffusion::{sample, CompositeTarget, DiffusionError, NoisePredictor, SampleOutput, SamplerConfig, TryOnModel};
use crate::exec::Exec;
use crate::mask::{agnostic_image, build_coarse_mask, build_fine_mask, garment_label, hand_foot_mask, Mask, MaskError, MaskKind};
use crate::raster::RgbImage;

pub use segment::{FnSegmenter, Segmenter, ThresholdSegmenter};

#[derive(Debug, Error)]
pub enum PmgError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("segmenter `{segmenter}` returned {got:?} for a {expected:?} image")]
    SegmenterShapeMismatch {
        segmenter: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("expected a {expected:?} mask, got {got:?}")]
    WrongMaskKind { expected: MaskKind, got: MaskKind },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmgConfig {
    /// Stop fraction of the coarse pass, in `[0, 1)`.
    pub sigma: f64,
    pub steps: usize,
    pub segmenter: String,
    /// Labels treated as the region of interest; empty means the garment
    /// label of the sample's category.
    pub target_classes: Vec<ParseLabel>,
    pub composite: bool,
    pub seed: u64,
}

impl Default for PmgConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            steps: 30,
            segmenter: ThresholdSegmenter::ID.into(),
            target_classes: Vec::new(),
            composite: true,
            seed: 0,
        }
    }
}

impl PmgConfig {
    pub fn validate(&self) -> Result<(), PmgError> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(PmgError::Config(format!("sigma = {} is outside [0, 1)", self.sigma)));
        }
        if self.steps < 2 {
            return Err(PmgError::Config(format!("steps = {} must be at least 2", self.steps)));
        }
        Ok(())
    }

    fn targets(&self, sample: &TryOnSample) -> Vec<ParseLabel> {
        if self.target_classes.is_empty() {
            vec![garment_label(sample.category)]
        } else {
            self.target_classes.clone()
        }
    }
}

/// Result of one inpainting pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput {
    pub image: RgbImage,
    pub sample: SampleOutput,
}

/// Inpaints `mask` on the person image. The main network sees the nearest
/// latent resize of the mask; compositing pins latent cells that contain no
/// masked pixel to the person latent, and after decoding every pixel outside
/// `mask` is taken from the codec reconstruction of the person.
pub fn inpaint(
    model: &TryOnModel,
    predictor: &dyn NoisePredictor,
    sample_in: &TryOnSample,
    mask: &Mask,
    prompts: &PromptPair,
    cfg: &SamplerConfig,
) -> Result<PassOutput, PmgError> {
    let f = model.codec.factor;
    let person_latent = model.codec.encode(&sample_in.person)?;
    let clothing_latent = model.codec.encode(&sample_in.clothing)?;
    let agnostic = model.codec.encode(&agnostic_image(&sample_in.person, mask)?)?;
    let cond = model.condition(
        &mask.resize_to_latent(f)?,
        &agnostic,
        &clothing_latent,
        &prompts.main_prompt,
        &prompts.reference_prompt,
    )?;
    let region = mask.resize_cover(f)?;
    let out = sample(
        predictor,
        &model.schedule,
        &cond,
        Some(CompositeTarget {
            person_latent: &person_latent,
            region: &region,
        }),
        cfg,
    )?;
    let mut image = model.codec.decode(&out.latent)?;
    if cfg.composite {
        let base = model.codec.decode(&person_latent)?;
        for y in 0..image.height {
            for x in 0..image.width {
                if !mask.get(y, x) {
                    image.set(y, x, base.get(y, x));
                }
            }
        }
    }
    Ok(PassOutput { image, sample: out })
}

/// Early-stopped pass over the coarse mask.
pub fn pmg_coarse_pass(
    model: &TryOnModel,
    predictor: &dyn NoisePredictor,
    sample_in: &TryOnSample,
    coarse: &Mask,
    prompts: &PromptPair,
    cfg: &PmgConfig,
) -> Result<PassOutput, PmgError> {
    cfg.validate()?;
    if coarse.kind != MaskKind::Coarse {
        return Err(PmgError::WrongMaskKind {
            expected: MaskKind::Coarse,
            got: coarse.kind,
        });
    }
    inpaint(
        model,
        predictor,
        sample_in,
        coarse,
        prompts,
        &SamplerConfig {
            steps: cfg.steps,
            stop_fraction: cfg.sigma,
            composite: cfg.composite,
            seed: cfg.seed,
        },
    )
}

/// `(target-class pixels of the estimate ∪ fine) \ hand/foot`, where
/// hand/foot covers both the segmenter's and the person's hand and foot
/// labels.
pub fn refine_mask(
    estimate: &RgbImage,
    fine: &Mask,
    segmenter: &dyn Segmenter,
    targets: &[ParseLabel],
    person_hand_foot: &Mask,
) -> Result<Mask, PmgError> {
    if fine.kind != MaskKind::Fine {
        return Err(PmgError::WrongMaskKind {
            expected: MaskKind::Fine,
            got: fine.kind,
        });
    }
    let labels = segmenter.segment(estimate);
    if (labels.height, labels.width) != (estimate.height, estimate.width) {
        return Err(PmgError::SegmenterShapeMismatch {
            segmenter: segmenter.id().into(),
            expected: (estimate.height, estimate.width),
            got: (labels.height, labels.width),
        });
    }
    let roi = Mask::from_labels(&labels, MaskKind::Refined, |l| targets.contains(&l));
    let seg_hand_foot = Mask::from_labels(&labels, MaskKind::Refined, ParseLabel::is_hand_or_foot);
    Ok(roi
        .union(fine)?
        .subtract(&seg_hand_foot)?
        .subtract(person_hand_foot)?
        .with_kind(MaskKind::Refined)
        .with_source(format!("refined:{}", segmenter.id())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmgOutput {
    pub image: RgbImage,
    pub coarse_estimate: RgbImage,
    pub fine: Mask,
    pub coarse: Mask,
    pub refined: Mask,
    pub coarse_steps: usize,
    pub final_steps: usize,
}

/// Coarse pass, mask refinement and final pass for one sample.
pub fn pmg_generate(
    model: &TryOnModel,
    predictor: &dyn NoisePredictor,
    segmenter: &dyn Segmenter,
    sample_in: &TryOnSample,
    prompts: &PromptPair,
    cfg: &PmgConfig,
) -> Result<PmgOutput, PmgError> {
    cfg.validate()?;
    let fine = build_fine_mask(sample_in)?;
    let coarse = build_coarse_mask(sample_in)?;
    let coarse_pass = pmg_coarse_pass(model, predictor, sample_in, &coarse, prompts, cfg)?;
    let refined = refine_mask(&coarse_pass.image, &fine, segmenter, &cfg.targets(sample_in), &hand_foot_mask(sample_in))?;
    let final_pass = inpaint(
        model,
        predictor,
        sample_in,
        &refined,
        prompts,
        &SamplerConfig {
            steps: cfg.steps,
            stop_fraction: 0.0,
            composite: cfg.composite,
            seed: cfg.seed,
        },
    )?;
    Ok(PmgOutput {
        image: final_pass.image,
        coarse_estimate: coarse_pass.image,
        fine,
        coarse,
        refined,
        coarse_steps: coarse_pass.sample.steps_executed,
        final_steps: final_pass.sample.steps_executed,
    })
}

/// Builds the segmenter named by `cfg.segmenter` for one sample. The only
/// built-in backend is [`ThresholdSegmenter`], keyed to the garment colour.
pub fn segmenter_for(cfg: &PmgConfig, sample_in: &TryOnSample) -> Result<Box<dyn Segmenter>, PmgError> {
    match cfg.segmenter.as_str() {
        ThresholdSegmenter::ID => Ok(Box::new(ThresholdSegmenter::for_garment(
            &sample_in.clothing,
            garment_label(sample_in.category),
        ))),
        other => Err(PmgError::Config(format!("unknown segmenter `{other}`"))),
    }
}

/// Runs [`pmg_generate`] over a batch with the configured segmenter; results
/// keep input order.
pub fn pmg_generate_batch(
    model: &TryOnModel,
    inputs: &[(TryOnSample, PromptPair)],
    cfg: &PmgConfig,
    exec: Exec,
) -> Vec<Result<PmgOutput, PmgError>> {
    exec.map(inputs, |(s, p)| {
        let seg = segmenter_for(cfg, s)?;
        pmg_generate(model, model, seg.as_ref(), s, p, cfg)
    })
}

/// One row of a stop-fraction sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub sigma: f64,
    pub coarse_steps: usize,
    pub final_steps: usize,
    /// Mean refined-mask area as a fraction of the frame.
    pub refined_area: f64,
    /// Mean refined-mask pixels beyond the fine mask, as a fraction of the frame.
    pub growth_over_fine: f64,
    /// Mean SSIM between output and person image.
    pub ssim_to_person: f64,
}

/// The stop fractions of the published ablation grid.
pub const SIGMA_GRID: [f64; 6] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

/// Sweeps `sigmas` over `inputs`. Values depend on the model and are not
/// expected to match any trained-model table.
pub fn sigma_sweep(
    model: &TryOnModel,
    inputs: &[(TryOnSample, PromptPair)],
    base: &PmgConfig,
    sigmas: &[f64],
    exec: Exec,
) -> Result<Vec<SigmaRow>, PmgError> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let cfg = PmgConfig { sigma, ..base.clone() };
        let outs: Vec<PmgOutput> = pmg_generate_batch(model, inputs, &cfg, exec)
            .into_iter()
            .collect::<Result<_, _>>()?;
        let n = outs.len().max(1) as f64;
        let mut row = SigmaRow {
            sigma,
            coarse_steps: outs.first().map_or(0, |o| o.coarse_steps),
            final_steps: outs.first().map_or(0, |o| o.final_steps),
            refined_area: 0.0,
            growth_over_fine: 0.0,
            ssim_to_person: 0.0,
        };
        for (o, (s, _)) in outs.iter().zip(inputs) {
            let frame = (o.refined.height * o.refined.width) as f64;
            row.refined_area += o.refined.count() as f64 / frame / n;
            row.growth_over_fine += o.refined.excess_over(&o.fine)? as f64 / frame / n;
            row.ssim_to_person += crate::eval::ssim(&o.image, &s.person, &crate::eval::SsimParams::default())
                .map_err(|e| PmgError::Config(e.to_string()))?
                / n;
        }
        rows.push(row);
    }
    Ok(rows)
}
