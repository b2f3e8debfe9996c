use serde::{Deserialize, Serialize};

use super::tensor::LatentImage;
use super::DiffusionError;

/// Variance schedule of the forward noising process.
///
/// `betas[0]` is a placeholder zero so that both tables are indexed by the
/// timestep itself; `alpha_bars[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// Linearly interpolated betas over `1..=timesteps`.
pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if timesteps == 0 {
        return Err(DiffusionError::RangeViolation("schedule needs at least one timestep".into()));
    }
    for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
        if !(b > 0.0 && b < 1.0) {
            return Err(DiffusionError::RangeViolation(format!("{name} = {b} is outside (0, 1)")));
        }
    }
    let mut betas = vec![0.0; timesteps + 1];
    let mut alpha_bars = vec![1.0; timesteps + 1];
    for t in 1..=timesteps {
        let frac = if timesteps == 1 { 0.0 } else { (t - 1) as f64 / (timesteps - 1) as f64 };
        betas[t] = beta_start + frac * (beta_end - beta_start);
        alpha_bars[t] = alpha_bars[t - 1] * (1.0 - betas[t]);
    }
    Ok(NoiseSchedule {
        timesteps,
        betas,
        alpha_bars,
    })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        self.alpha_bars.get(t).copied().ok_or(DiffusionError::TimestepOutOfRange {
            t,
            max: self.timesteps,
        })
    }
}

/// `z_t = √ᾱ_t · z_0 + √(1 − ᾱ_t) · noise`. `t = 0` returns `z_0`.
pub fn add_noise(z0: &LatentImage, t: usize, noise: &LatentImage, s: &NoiseSchedule) -> Result<LatentImage, DiffusionError> {
    z0.ensure_same_shape(noise, "noise")?;
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(LatentImage {
        height: z0.height,
        width: z0.width,
        tokens: z0.tokens.zip_map(&noise.tokens, |z, e| a * z + b * e),
    })
}

/// Inverts [`add_noise`] given a noise estimate.
pub fn predict_z0(zt: &LatentImage, noise_pred: &LatentImage, t: usize, s: &NoiseSchedule) -> Result<LatentImage, DiffusionError> {
    zt.ensure_same_shape(noise_pred, "noise prediction")?;
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(LatentImage {
        height: zt.height,
        width: zt.width,
        tokens: zt.tokens.zip_map(&noise_pred.tokens, |z, e| (z - b * e) / a),
    })
}
