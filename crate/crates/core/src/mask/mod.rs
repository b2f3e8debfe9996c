//! Binary inpainting masks: construction from parse maps and keypoints,
//! morphological dilation, random dilation augmentation and mask algebra.

mod augment;
mod construct;
mod morphology;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelMap;
use crate::raster::{GrayImage, RasterError, RgbImage};

pub use augment::{default_n_max, draw_iterations, random_dilation_augment, DilationSpec};
pub use construct::{build_coarse_mask, build_fine_mask, coarse_rectangle, fine_labels, garment_label, hand_foot_mask, CONFIDENCE_THRESHOLD};
pub use morphology::{dilate, StructuringElement};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("mask shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("no {0} pixels found in the parse map")]
    EmptyRegion(String),
    #[error("required keypoints below confidence: {0}")]
    PoseIncomplete(String),
    #[error("fine mask is not contained in the coarse mask ({0} pixels outside)")]
    FineNotInCoarse(usize),
    #[error("{height}x{width} is not divisible by factor {factor}")]
    IndivisibleShape {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("structuring element must be (2r+1)x(2r+1) with its origin set")]
    InvalidElement,
    #[error("mask PNG {0} holds values other than 0 and 255")]
    NotBinary(String),
    #[error("mask raster I/O: {0}")]
    Raster(String),
}

impl From<RasterError> for MaskError {
    fn from(e: RasterError) -> Self {
        MaskError::Raster(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Fine,
    Coarse,
    Dilated,
    Refined,
}

/// Binary raster; `true` marks pixels to inpaint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
    pub kind: MaskKind,
    pub source: String,
}

impl Mask {
    pub fn empty(height: usize, width: usize, kind: MaskKind) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
            kind,
            source: String::new(),
        }
    }

    pub fn full(height: usize, width: usize, kind: MaskKind) -> Self {
        Self {
            bits: vec![true; height * width],
            ..Self::empty(height, width, kind)
        }
    }

    pub fn from_fn(height: usize, width: usize, kind: MaskKind, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(height, width, kind);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(y, x);
            }
        }
        m
    }

    /// Pixels whose parse label satisfies `pred`.
    pub fn from_labels(parsing: &LabelMap, kind: MaskKind, pred: impl Fn(crate::data::ParseLabel) -> bool) -> Self {
        Self {
            height: parsing.height,
            width: parsing.width,
            bits: parsing.data.iter().map(|&l| pred(l)).collect(),
            kind,
            source: String::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn with_kind(mut self, kind: MaskKind) -> Self {
        self.kind = kind;
        self
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_shape(&self, other: &Mask) -> Result<(), MaskError> {
        if self.height != other.height || self.width != other.width {
            return Err(MaskError::ShapeMismatch(self.height, self.width, other.height, other.width));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask, MaskError> {
        self.check_shape(other)?;
        Ok(Mask {
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    /// `self \ other`
    pub fn subtract(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Mask {
        Mask {
            bits: self.bits.iter().map(|&b| !b).collect(),
            ..self.clone()
        }
    }

    pub fn is_subset(&self, of: &Mask) -> Result<bool, MaskError> {
        self.check_shape(of)?;
        Ok(self.bits.iter().zip(&of.bits).all(|(&a, &b)| !a || b))
    }

    /// Number of set pixels of `self` that are unset in `of`.
    pub fn excess_over(&self, of: &Mask) -> Result<usize, MaskError> {
        self.check_shape(of)?;
        Ok(self.bits.iter().zip(&of.bits).filter(|(&a, &b)| a && !b).count())
    }

    /// Nearest-neighbour downsample sampling the top-left pixel of each
    /// `factor x factor` cell.
    pub fn resize_to_latent(&self, factor: usize) -> Result<Mask, MaskError> {
        let (h, w) = self.latent_dims(factor)?;
        Ok(Mask {
            height: h,
            width: w,
            bits: (0..h * w).map(|i| self.get((i / w) * factor, (i % w) * factor)).collect(),
            kind: self.kind,
            source: format!("{} | resize/{factor}", self.source),
        })
    }

    /// Downsample where a cell is set if any of its pixels is set.
    pub fn resize_cover(&self, factor: usize) -> Result<Mask, MaskError> {
        let (h, w) = self.latent_dims(factor)?;
        let mut out = Mask::empty(h, w, self.kind);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    out.set(y / factor, x / factor, true);
                }
            }
        }
        out.source = format!("{} | cover/{factor}", self.source);
        Ok(out)
    }

    fn latent_dims(&self, factor: usize) -> Result<(usize, usize), MaskError> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(MaskError::IndivisibleShape {
                height: self.height,
                width: self.width,
                factor,
            });
        }
        Ok((self.height / factor, self.width / factor))
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Writes an 8-bit PNG with values exactly {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<(), MaskError> {
        Ok(self.to_gray().save_png(path)?)
    }

    pub fn load_png(path: &Path, kind: MaskKind) -> Result<Mask, MaskError> {
        let g = GrayImage::load_png(path)?;
        if g.data.iter().any(|&v| v != 0 && v != 255) {
            return Err(MaskError::NotBinary(path.display().to_string()));
        }
        Ok(Mask {
            height: g.height,
            width: g.width,
            bits: g.data.iter().map(|&v| v == 255).collect(),
            kind,
            source: path.display().to_string(),
        })
    }
}

/// Person raster with the masked region replaced by neutral grey.
pub fn agnostic_image(person: &RgbImage, mask: &Mask) -> Result<RgbImage, MaskError> {
    if person.height != mask.height || person.width != mask.width {
        return Err(MaskError::ShapeMismatch(person.height, person.width, mask.height, mask.width));
    }
    let mut out = person.clone();
    for (px, &m) in out.data.iter_mut().zip(&mask.bits) {
        if m {
            *px = [0.5; 3];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_mask(h: usize, w: usize) -> impl Strategy<Value = Mask> {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Mask {
            height: h,
            width: w,
            bits,
            kind: MaskKind::Fine,
            source: String::new(),
        })
    }

    #[test]
    fn union_is_idempotent_and_complement_disjoint() {
        let a = Mask::from_fn(5, 7, MaskKind::Fine, |y, x| (x * 3 + y) % 4 == 0);
        assert_eq!(a.union(&a).unwrap(), a);
        assert!(a.intersect(&a.complement()).unwrap().is_empty());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Mask::empty(4, 4, MaskKind::Fine);
        let b = Mask::empty(4, 5, MaskKind::Fine);
        assert_eq!(a.union(&b), Err(MaskError::ShapeMismatch(4, 4, 4, 5)));
        assert!(a.is_subset(&b).is_err());
    }

    #[test]
    fn resize_all_ones_and_checkerboard() {
        let ones = Mask::full(16, 8, MaskKind::Dilated);
        let r = ones.resize_to_latent(8).unwrap();
        assert_eq!((r.height, r.width), (2, 1));
        assert!(r.bits.iter().all(|&b| b));

        // Checkerboard with (0,0) set: every top-left anchor (even, even) is set.
        let cb = Mask::from_fn(4, 6, MaskKind::Fine, |y, x| (y + x) % 2 == 0);
        let r = cb.resize_to_latent(2).unwrap();
        assert_eq!((r.height, r.width), (2, 3));
        assert!(r.bits.iter().all(|&b| b));
        // Shifted checkerboard: anchors all unset.
        let r = cb.complement().resize_to_latent(2).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn resize_rejects_indivisible_shape() {
        let m = Mask::empty(30, 30, MaskKind::Fine);
        assert_eq!(
            m.resize_to_latent(8),
            Err(MaskError::IndivisibleShape {
                height: 30,
                width: 30,
                factor: 8
            })
        );
    }

    #[test]
    fn png_roundtrip_is_strictly_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::from_fn(9, 5, MaskKind::Refined, |y, x| y > x);
        m.save_png(&p).unwrap();
        let g = GrayImage::load_png(&p).unwrap();
        assert!(g.data.iter().all(|&v| v == 0 || v == 255));
        let back = Mask::load_png(&p, MaskKind::Refined).unwrap();
        assert_eq!(back.bits, m.bits);
    }

    proptest! {
        #[test]
        fn union_matches_pixel_loop((a, b) in (arb_mask(6, 9), arb_mask(6, 9))) {
            let u = a.union(&b).unwrap();
            let i = a.intersect(&b).unwrap();
            for y in 0..6 {
                for x in 0..9 {
                    prop_assert_eq!(u.get(y, x), a.get(y, x) || b.get(y, x));
                    prop_assert_eq!(i.get(y, x), a.get(y, x) && b.get(y, x));
                }
            }
            prop_assert!(a.is_subset(&u).unwrap());
            prop_assert!(i.is_subset(&a).unwrap());
        }

        #[test]
        fn cover_resize_contains_anchor_resize(a in arb_mask(8, 16)) {
            let anchor = a.resize_to_latent(4).unwrap();
            let cover = a.resize_cover(4).unwrap();
            prop_assert!(anchor.is_subset(&cover).unwrap());
        }
    }
}
