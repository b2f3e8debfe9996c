//! Miniature latent-diffusion inpainting.
//!
//! A fixed patch codec maps 64×48 rasters to 8×6×4 latents. The main toy
//! U-Net predicts noise from `z_t ⧺ mask ⧺ agnostic latent`, attends over the
//! prompt tokens, and appends keys/values harvested from a frozen reference
//! U-Net run on the clothing latent. Gradients come from a small tape-based
//! reverse-mode differentiator in double precision.

pub mod attention;
pub mod checkpoint;
pub mod codec;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;
pub mod unet;

use std::path::Path;

use thiserror::Error;

use crate::mask::MaskError;

pub use attention::{attend, attend_with_reference, inject_reference_kv, AttentionOutput, KvPair};
pub use codec::{PatchCodec, LATENT_CHANNELS};
pub use model::{denoiser_forward, Conditioning, CountingPredictor, ModelConfig, NoisePredictor, TryOnModel};
pub use sampler::{executed_steps, sample, timestep_grid, CompositeTarget, SampleOutput, SamplerConfig};
pub use schedule::{add_noise, make_schedule, predict_z0, NoiseSchedule};
pub use tensor::{LatentImage, Matrix};
pub use text::{HashTextEncoder, TextEmbedding};
pub use train::{
    ldm_loss, loss_and_grads, loss_value, train_loop, train_step, Adam, Optimizer, OptimizerConfig, Sgd, StepReport, TrainConfig, TrainExample,
    TrainLog,
};
pub use unet::{UNetConfig, UNetInput, UNetRole, UNetToy};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("out of range: {0}")]
    RangeViolation(String),
    #[error("timestep {t} outside 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("attention layer shapes disagree: {0}")]
    LayerShapeMismatch(String),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("prompt has {tokens} tokens, limit is {limit}")]
    TooManyTokens { tokens: usize, limit: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl TryOnModel {
    /// Writes both networks plus the model config.
    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        let meta = serde_json::to_string(&self.config).expect("config serializes");
        let mut tensors = Vec::new();
        for (prefix, net) in [("main", &self.main), ("reference", &self.reference)] {
            for (n, p) in net.names.iter().zip(&net.params) {
                tensors.push((format!("{prefix}.{n}"), p));
            }
        }
        checkpoint::save_checkpoint(path, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        let (meta, tensors) = checkpoint::load_checkpoint(path)?;
        let config: ModelConfig =
            serde_json::from_str(&meta).map_err(|e| DiffusionError::Checkpoint(format!("bad meta: {e}")))?;
        let mut model = TryOnModel::new(config)?;
        let mut main = Vec::new();
        let mut reference = Vec::new();
        for (name, m) in tensors {
            if let Some(n) = name.strip_prefix("main.") {
                main.push((n.to_string(), m));
            } else if let Some(n) = name.strip_prefix("reference.") {
                reference.push((n.to_string(), m));
            } else {
                return Err(DiffusionError::Checkpoint(format!("unexpected tensor {name}")));
            }
        }
        model.main = UNetToy::from_tensors(UNetRole::Main, config.unet, main)?;
        model.reference = UNetToy::from_tensors(UNetRole::Reference, config.unet, reference)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut model = TryOnModel::new(ModelConfig::default()).unwrap();
        model.main.params[3].data[0] = 0.125;
        model.save(&path).unwrap();
        let back = TryOnModel::load(&path).unwrap();
        assert_eq!(back, model);
    }
}
