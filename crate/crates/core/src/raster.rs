//! Plain raster containers and 8-bit PNG I/O.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image I/O failed for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("raster shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// RGB raster with channel values in `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self {
            height,
            width,
            data: vec![rgb; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        self.data[y * self.width + x] = rgb;
    }

    pub fn same_shape(&self, other: &RgbImage) -> Result<(), RasterError> {
        if self.height != other.height || self.width != other.width {
            return Err(RasterError::ShapeMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }

    /// Largest per-channel absolute difference.
    pub fn max_abs_diff(&self, other: &RgbImage) -> Result<f64, RasterError> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max))
    }

    /// Quantizes to 8 bits per channel (round-to-nearest, clamped).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in out.pixels_mut().enumerate() {
            let v = self.data[i];
            px.0 = [quantize(v[0]), quantize(v[1]), quantize(v[2])];
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| {
                [
                    p.0[0] as f64 / 255.0,
                    p.0[1] as f64 / 255.0,
                    p.0[2] as f64 / 255.0,
                ]
            })
            .collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        self.to_rgb8().save(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// PNG-encoded bytes, used for content addressing and data URLs.
    pub fn png_bytes(&self) -> Vec<u8> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, image::ImageFormat::Png)
            .expect("in-memory PNG encoding cannot fail");
        buf.into_inner()
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions");
        img.save(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let g = img.to_luma8();
        Ok(Self {
            height: g.height() as usize,
            width: g.width() as usize,
            data: g.into_raw(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_bit_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::new(4, 3);
        for (i, px) in img.data.iter_mut().enumerate() {
            *px = [i as f64 / 11.0, 0.5, 1.0 - i as f64 / 11.0];
        }
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let once = RgbImage::load_png(&p).unwrap();
        once.save_png(&p).unwrap();
        let twice = RgbImage::load_png(&p).unwrap();
        assert_eq!(once, twice);
        assert!(img.max_abs_diff(&once).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
}
