use crate::data::{LabelMap, ParseLabel};
use crate::raster::RgbImage;

/// Raster → parse labels of the same shape.
pub trait Segmenter: Sync {
    fn id(&self) -> &str;
    fn segment(&self, image: &RgbImage) -> LabelMap;
}

/// Deterministic stand-in for a human parser.
///
/// A pixel gets `label` when its colour lies within `threshold` (Euclidean,
/// RGB) of `reference`, normally the mean colour of the garment image;
/// everything else is background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSegmenter {
    pub label: ParseLabel,
    pub reference: [f64; 3],
    pub threshold: f64,
}

impl ThresholdSegmenter {
    pub const ID: &'static str = "threshold";
    pub const DEFAULT_THRESHOLD: f64 = 0.25;

    /// References the mean colour of the non-white pixels of a garment image.
    pub fn for_garment(clothing: &RgbImage, label: ParseLabel) -> Self {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for p in &clothing.data {
            if p.iter().any(|&v| v < 0.95) {
                for c in 0..3 {
                    sum[c] += p[c];
                }
                n += 1;
            }
        }
        let reference = if n == 0 { [0.5; 3] } else { sum.map(|s| s / n as f64) };
        Self {
            label,
            reference,
            threshold: Self::DEFAULT_THRESHOLD,
        }
    }
}

impl Segmenter for ThresholdSegmenter {
    fn id(&self) -> &str {
        Self::ID
    }

    fn segment(&self, image: &RgbImage) -> LabelMap {
        let mut out = LabelMap::filled(image.height, image.width, ParseLabel::Background);
        for y in 0..image.height {
            for x in 0..image.width {
                let p = image.get(y, x);
                let d = (0..3).map(|c| (p[c] - self.reference[c]).powi(2)).sum::<f64>().sqrt();
                if d <= self.threshold {
                    out.set(y, x, self.label);
                }
            }
        }
        out
    }
}

/// Segmenter backed by a closure, for adapters and tests.
pub struct FnSegmenter<F> {
    pub name: String,
    pub f: F,
}

impl<F> Segmenter for FnSegmenter<F>
where
    F: Fn(&RgbImage) -> LabelMap + Sync,
{
    fn id(&self) -> &str {
        &self.name
    }

    fn segment(&self, image: &RgbImage) -> LabelMap {
        (self.f)(image)
    }
}
