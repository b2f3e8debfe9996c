//! Fixed patch-projection codec standing in for a learned VAE.
//!
//! Each `f × f` RGB patch is projected onto four orthonormal patch vectors:
//! the three per-channel constants and a luminance ramp running top to
//! bottom. Latent values are affinely rescaled so a patch of colour `c` gives
//! `2c − 1` in the first three channels. Decoding applies the transpose, so
//! `decode ∘ encode` is the orthogonal projection onto that span (then
//! clamped to `[0, 1]`); it is exact for patches that are flat per channel.

use serde::{Deserialize, Serialize};

use super::tensor::{LatentImage, Matrix};
use super::DiffusionError;
use crate::raster::RgbImage;

pub const LATENT_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchCodec {
    pub factor: usize,
    /// Latent units per unit of ramp coefficient.
    ramp_gain: f64,
}

impl Default for PatchCodec {
    fn default() -> Self {
        Self::new(8)
    }
}

impl PatchCodec {
    pub fn new(factor: usize) -> Self {
        assert!(factor >= 2, "codec factor must be at least 2");
        // A full 0→1 vertical ramp on all channels maps to a latent value of 1.
        let full_ramp: f64 = (0..factor)
            .map(|y| 3.0 * factor as f64 * (y as f64 / (factor - 1) as f64) * Self::ramp_at(factor, y))
            .sum();
        Self {
            factor,
            ramp_gain: 1.0 / full_ramp,
        }
    }

    pub fn channels(&self) -> usize {
        LATENT_CHANNELS
    }

    /// Value of the unit-norm ramp vector at patch row `y` (same for all
    /// columns and channels).
    fn ramp_at(factor: usize, y: usize) -> f64 {
        let centre = (factor - 1) as f64 / 2.0;
        let norm: f64 = (0..factor).map(|r| (r as f64 - centre).powi(2)).sum::<f64>() * 3.0 * factor as f64;
        (y as f64 - centre) / norm.sqrt()
    }

    pub fn latent_dims(&self, height: usize, width: usize) -> Result<(usize, usize), DiffusionError> {
        if !height.is_multiple_of(self.factor) || !width.is_multiple_of(self.factor) || height == 0 || width == 0 {
            return Err(DiffusionError::ShapeMismatch {
                what: format!("image not divisible by codec factor {}", self.factor),
                expected: (height / self.factor * self.factor, width / self.factor * self.factor),
                got: (height, width),
            });
        }
        Ok((height / self.factor, width / self.factor))
    }

    pub fn encode(&self, img: &RgbImage) -> Result<LatentImage, DiffusionError> {
        let (h, w) = self.latent_dims(img.height, img.width)?;
        let f = self.factor;
        let area = (f * f) as f64;
        let mut tokens = Matrix::zeros(h * w, LATENT_CHANNELS);
        for ly in 0..h {
            for lx in 0..w {
                let mut mean = [0.0; 3];
                let mut ramp = 0.0;
                for py in 0..f {
                    let r = Self::ramp_at(f, py);
                    for px in 0..f {
                        let v = img.get(ly * f + py, lx * f + px);
                        for c in 0..3 {
                            mean[c] += v[c];
                            ramp += r * v[c];
                        }
                    }
                }
                let p = ly * w + lx;
                for (c, m) in mean.iter().enumerate() {
                    tokens.set(p, c, 2.0 * m / area - 1.0);
                }
                tokens.set(p, 3, ramp * self.ramp_gain);
            }
        }
        LatentImage::from_tokens(h, w, tokens)
    }

    pub fn decode(&self, z: &LatentImage) -> Result<RgbImage, DiffusionError> {
        if z.channels() != LATENT_CHANNELS {
            return Err(DiffusionError::ShapeMismatch {
                what: "latent channels".into(),
                expected: (z.height * z.width, LATENT_CHANNELS),
                got: z.tokens.shape(),
            });
        }
        let f = self.factor;
        let mut img = RgbImage::new(z.height * f, z.width * f);
        for ly in 0..z.height {
            for lx in 0..z.width {
                let p = ly * z.width + lx;
                let mean: Vec<f64> = (0..3).map(|c| (z.tokens.get(p, c) + 1.0) / 2.0).collect();
                let ramp = z.tokens.get(p, 3) / self.ramp_gain;
                for py in 0..f {
                    let r = ramp * Self::ramp_at(f, py);
                    for px in 0..f {
                        let rgb = [0, 1, 2].map(|c| (mean[c] + r).clamp(0.0, 1.0));
                        img.set(ly * f + py, lx * f + px, rgb);
                    }
                }
            }
        }
        Ok(img)
    }

    /// `decode(encode(img))`.
    pub fn reconstruct(&self, img: &RgbImage) -> Result<RgbImage, DiffusionError> {
        self.decode(&self.encode(img)?)
    }

    /// Largest per-pixel, per-channel error of `decode(encode(img))`.
    pub fn roundtrip_error(&self, img: &RgbImage) -> Result<f64, DiffusionError> {
        let back = self.reconstruct(img)?;
        Ok(back.max_abs_diff(img).expect("codec preserves shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_ramp_patches_are_exact() {
        let codec = PatchCodec::default();
        let mut img = RgbImage::new(16, 8);
        for y in 0..16 {
            for x in 0..8 {
                let ramp = if y < 8 { 0.0 } else { (y - 8) as f64 / 7.0 * 0.5 };
                img.set(y, x, [0.2 + ramp, 0.5 + ramp, 0.9 - 0.4 + ramp]);
            }
        }
        assert!(codec.roundtrip_error(&img).unwrap() < 1e-12);
        let z = codec.encode(&img).unwrap();
        assert!((z.get(0, 0, 0) - (2.0 * 0.2 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn full_ramp_has_unit_latent() {
        let codec = PatchCodec::default();
        let mut img = RgbImage::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let v = y as f64 / 7.0;
                img.set(y, x, [v, v, v]);
            }
        }
        let z = codec.encode(&img).unwrap();
        assert!((z.get(3, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_is_linear_projection() {
        // Encoding a reconstruction reproduces the same latent.
        let codec = PatchCodec::default();
        let img = RgbImage::from_rgb8(&image::RgbImage::from_fn(16, 24, |x, y| image::Rgb([100 + (x * 13 % 50) as u8, 100 + (y * 7 % 50) as u8, 128])));
        let z = codec.encode(&img).unwrap();
        let z2 = codec.encode(&codec.decode(&z).unwrap()).unwrap();
        assert!(z.tokens.max_abs_diff(&z2.tokens) < 1e-9);
    }

    #[test]
    fn indivisible_rejected() {
        assert!(PatchCodec::default().encode(&RgbImage::new(10, 8)).is_err());
    }
}
