//! Main + reference denoiser pair with its codec, text encoder and schedule.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::attention::KvPair;
use super::codec::PatchCodec;
use super::schedule::{make_schedule, NoiseSchedule};
use super::tensor::{LatentImage, Matrix};
use super::text::{HashTextEncoder, TextEmbedding};
use super::unet::{UNetConfig, UNetInput, UNetRole, UNetToy};
use super::DiffusionError;
use crate::mask::Mask;

/// Timestep at which the reference network reads the clean clothing latent.
pub const REFERENCE_TIMESTEP: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub unet: UNetConfig,
    pub codec_factor: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub main_seed: u64,
    pub reference_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            unet: UNetConfig::default(),
            codec_factor: 8,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            main_seed: 1,
            reference_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TryOnModel {
    pub config: ModelConfig,
    pub main: UNetToy,
    pub reference: UNetToy,
    pub codec: PatchCodec,
    pub text: HashTextEncoder,
    pub schedule: NoiseSchedule,
}

/// Everything but the noisy latent and timestep that the main network sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// Latent-resolution inpainting mask as a single 0/1 column.
    pub mask: Matrix,
    pub agnostic: LatentImage,
    pub reference_kv: Vec<KvPair>,
    pub text: TextEmbedding,
}

impl Conditioning {
    pub fn dims(&self) -> (usize, usize) {
        (self.agnostic.height, self.agnostic.width)
    }
}

pub(crate) fn mask_column(mask: &Mask) -> Matrix {
    Matrix::from_fn(mask.height * mask.width, 1, |p, _| if mask.bits[p] { 1.0 } else { 0.0 })
}

impl TryOnModel {
    pub fn new(config: ModelConfig) -> Result<Self, DiffusionError> {
        let text = HashTextEncoder {
            dim: config.unet.text_dim,
            ..Default::default()
        };
        Ok(Self {
            main: UNetToy::new(UNetRole::Main, config.unet, config.main_seed),
            reference: UNetToy::new(UNetRole::Reference, config.unet, config.reference_seed),
            codec: PatchCodec::new(config.codec_factor),
            text,
            schedule: make_schedule(config.timesteps, config.beta_start, config.beta_end)?,
            config,
        })
    }

    /// Reference-network keys/values for a clothing latent and reference prompt.
    pub fn reference_kv(&self, clothing: &LatentImage, reference_prompt: &str) -> Result<Vec<KvPair>, DiffusionError> {
        let text = self.text.encode(reference_prompt)?;
        self.reference.harvest_kv(&UNetInput {
            x: &clothing.tokens,
            height: clothing.height,
            width: clothing.width,
            t: REFERENCE_TIMESTEP,
            text: &text,
            reference_kv: None,
        })
    }

    /// Bundles the conditioning for a sample. `mask` must already be at
    /// latent resolution.
    pub fn condition(
        &self,
        mask: &Mask,
        agnostic: &LatentImage,
        clothing: &LatentImage,
        main_prompt: &str,
        reference_prompt: &str,
    ) -> Result<Conditioning, DiffusionError> {
        agnostic.ensure_same_shape(clothing, "clothing latent")?;
        if (mask.height, mask.width) != (agnostic.height, agnostic.width) {
            return Err(DiffusionError::ShapeMismatch {
                what: "latent mask".into(),
                expected: (agnostic.height, agnostic.width),
                got: (mask.height, mask.width),
            });
        }
        Ok(Conditioning {
            mask: mask_column(mask),
            agnostic: agnostic.clone(),
            reference_kv: self.reference_kv(clothing, reference_prompt)?,
            text: self.text.encode(main_prompt)?,
        })
    }

    /// `z_t ⧺ mask ⧺ agnostic` along the channel axis.
    pub fn main_input(&self, cond: &Conditioning, zt: &LatentImage) -> Result<Matrix, DiffusionError> {
        zt.ensure_same_shape(&cond.agnostic, "noisy latent")?;
        Ok(Matrix::concat_cols(&[&zt.tokens, &cond.mask, &cond.agnostic.tokens]))
    }
}

/// Anything that predicts the noise in `z_t`.
pub trait NoisePredictor: Sync {
    fn predict_noise(&self, cond: &Conditioning, zt: &LatentImage, t: usize) -> Result<LatentImage, DiffusionError>;
}

impl NoisePredictor for TryOnModel {
    fn predict_noise(&self, cond: &Conditioning, zt: &LatentImage, t: usize) -> Result<LatentImage, DiffusionError> {
        if t > self.schedule.timesteps {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                max: self.schedule.timesteps,
            });
        }
        let x = self.main_input(cond, zt)?;
        let out = self.main.forward(&UNetInput {
            x: &x,
            height: zt.height,
            width: zt.width,
            t,
            text: &cond.text,
            reference_kv: Some(&cond.reference_kv),
        })?;
        LatentImage::from_tokens(zt.height, zt.width, out)
    }
}

/// Counts calls to the wrapped predictor.
pub struct CountingPredictor<'a> {
    inner: &'a dyn NoisePredictor,
    calls: AtomicUsize,
}

impl<'a> CountingPredictor<'a> {
    pub fn new(inner: &'a dyn NoisePredictor) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) -> usize {
        self.calls.swap(0, Ordering::SeqCst)
    }
}

impl NoisePredictor for CountingPredictor<'_> {
    fn predict_noise(&self, cond: &Conditioning, zt: &LatentImage, t: usize) -> Result<LatentImage, DiffusionError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict_noise(cond, zt, t)
    }
}

/// Full denoiser call: harvests reference keys/values from the clothing
/// latent under the reference prompt, then runs the main network.
#[allow(clippy::too_many_arguments)]
pub fn denoiser_forward(
    model: &TryOnModel,
    zt: &LatentImage,
    mask: &Mask,
    agnostic: &LatentImage,
    clothing: &LatentImage,
    main_prompt: &str,
    reference_prompt: &str,
    t: usize,
) -> Result<LatentImage, DiffusionError> {
    let cond = model.condition(mask, agnostic, clothing, main_prompt, reference_prompt)?;
    model.predict_noise(&cond, zt, t)
}
