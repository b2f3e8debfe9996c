//! Deterministic DDIM-style sampler with early stopping and latent compositing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Conditioning, NoisePredictor};
use super::schedule::{add_noise, predict_z0, NoiseSchedule};
use super::tensor::{LatentImage, Matrix};
use super::DiffusionError;
use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Fraction of the trajectory skipped at the end; 0 runs it fully.
    pub stop_fraction: f64,
    pub composite: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            stop_fraction: 0.0,
            composite: true,
            seed: 0,
        }
    }
}

/// Denoiser calls made for `steps` and stop fraction `sigma`:
/// `⌈(1 − σ)·steps⌉`. A 1e-9 guard keeps products like `0.1·30` from
/// rounding up past their exact value.
pub fn executed_steps(steps: usize, sigma: f64) -> Result<usize, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::RangeViolation("steps must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&sigma) {
        return Err(DiffusionError::RangeViolation(format!("stop fraction {sigma} is outside [0, 1)")));
    }
    let k = ((1.0 - sigma) * steps as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, steps))
}

/// `steps + 1` uniformly spaced timesteps from `T` down to 0.
pub fn timestep_grid(steps: usize, timesteps: usize) -> Vec<usize> {
    (0..=steps)
        .map(|i| (((steps - i) * timesteps) as f64 / steps as f64).round() as usize)
        .collect()
}

/// Latent-resolution context for compositing: the clean person latent and
/// the region (true = generate) whose outside is pinned to it.
#[derive(Debug, Clone, Copy)]
pub struct CompositeTarget<'a> {
    pub person_latent: &'a LatentImage,
    pub region: &'a Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// Final latent estimate ẑ₀.
    pub latent: LatentImage,
    pub steps_executed: usize,
    /// Timesteps at which the denoiser was called.
    pub timesteps: Vec<usize>,
}

fn composite(z: &LatentImage, keep: &LatentImage, region: &Mask) -> LatentImage {
    let mut out = z.clone();
    for p in 0..region.bits.len() {
        if !region.bits[p] {
            for c in 0..z.channels() {
                out.tokens.set(p, c, keep.tokens.get(p, c));
            }
        }
    }
    out
}

/// Runs the sampler. With a stop fraction σ > 0 only `⌈(1 − σ)·steps⌉`
/// steps are executed and the ẑ₀ predicted at the last one is returned.
/// With compositing, after each step the latent outside `target.region` is
/// replaced by the person latent noised to the next timestep with a fixed
/// noise draw.
pub fn sample(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    cond: &Conditioning,
    target: Option<CompositeTarget>,
    cfg: &SamplerConfig,
) -> Result<SampleOutput, DiffusionError> {
    let k = executed_steps(cfg.steps, cfg.stop_fraction)?;
    let (h, w) = cond.dims();
    let channels = cond.agnostic.channels();
    let target = if cfg.composite { target } else { None };
    if let Some(tg) = target {
        tg.person_latent.ensure_same_shape(&cond.agnostic, "person latent")?;
        if (tg.region.height, tg.region.width) != (h, w) {
            return Err(DiffusionError::ShapeMismatch {
                what: "composite region".into(),
                expected: (h, w),
                got: (tg.region.height, tg.region.width),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = LatentImage::from_tokens(h, w, Matrix::randn(h * w, channels, 1.0, &mut rng))?;
    let fixed_noise = LatentImage::from_tokens(h, w, Matrix::randn(h * w, channels, 1.0, &mut rng))?;
    let grid = timestep_grid(cfg.steps, schedule.timesteps);
    if let Some(tg) = target {
        z = composite(&z, &add_noise(tg.person_latent, grid[0], &fixed_noise, schedule)?, tg.region);
    }

    let mut z0 = z.clone();
    for i in 0..k {
        let (t, t_next) = (grid[i], grid[i + 1]);
        let eps = predictor.predict_noise(cond, &z, t)?;
        z0 = predict_z0(&z, &eps, t, schedule)?;
        let ab = schedule.alpha_bar(t_next)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z = LatentImage {
            height: h,
            width: w,
            tokens: z0.tokens.zip_map(&eps.tokens, |x, e| a * x + b * e),
        };
        if let Some(tg) = target {
            z = composite(&z, &add_noise(tg.person_latent, t_next, &fixed_noise, schedule)?, tg.region);
            z0 = composite(&z0, tg.person_latent, tg.region);
        }
    }
    if !z0.is_finite() {
        return Err(DiffusionError::NonFiniteLoss(f64::NAN));
    }
    Ok(SampleOutput {
        latent: z0,
        steps_executed: k,
        timesteps: grid[..k].to_vec(),
    })
}
