//! Dataset layout, sample types and the caption cache.
//!
//! On-disk layout for one split:
//!
//! ```text
//! <root>/<split>/image/<id>.png        person raster
//! <root>/<split>/cloth/<id>.png        in-shop garment raster
//! <root>/<split>/image-parse/<id>.png  8-bit label ids (see `ParseLabel`)
//! <root>/<split>/pose/<id>.json        {"category": ..., "keypoints": [[x, y, conf], ...]}
//! <root>/<split>/agnostic/<id>.png     person with the fine-mask region neutralized
//! <root>/<split>/pairs_paired.txt      "<person_id> <clothing_id>" per line
//! <root>/<split>/pairs_unpaired.txt
//! ```

mod cache;
mod dataset;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{RasterError, RgbImage};

pub use cache::{cache_captions, compact_store, lookup_captions, CaptionRecord, Subject};
pub use dataset::{load_sample, save_sample, DatasetIndex, Pairing, Split};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("parse map {path} contains undeclared class id {id}")]
    LabelSetViolation { path: String, id: u8 },
    #[error("entry index {index} out of range for {len} entries")]
    EntryOutOfRange { index: usize, len: usize },
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
    #[error("caption store corrupt at {path}:{line}: {detail}")]
    StoreCorrupt {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("invalid caption record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Garment category a sample is edited for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    UpperBody,
    LowerBody,
    Dresses,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::UpperBody, Category::LowerBody, Category::Dresses];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::UpperBody => "upper_body",
            Category::LowerBody => "lower_body",
            Category::Dresses => "dresses",
        }
    }
}

/// The closed 12-class human parsing label set.
///
/// | id | class         |
/// |----|---------------|
/// | 0  | background    |
/// | 1  | hair          |
/// | 2  | face          |
/// | 3  | neck          |
/// | 4  | upper clothes |
/// | 5  | dress         |
/// | 6  | lower clothes |
/// | 7  | torso skin    |
/// | 8  | arms          |
/// | 9  | hands         |
/// | 10 | legs          |
/// | 11 | feet          |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ParseLabel {
    Background = 0,
    Hair = 1,
    Face = 2,
    Neck = 3,
    UpperClothes = 4,
    Dress = 5,
    LowerClothes = 6,
    TorsoSkin = 7,
    Arms = 8,
    Hands = 9,
    Legs = 10,
    Feet = 11,
}

impl ParseLabel {
    pub const COUNT: usize = 12;

    pub fn from_id(id: u8) -> Option<Self> {
        use ParseLabel::*;
        Some(match id {
            0 => Background,
            1 => Hair,
            2 => Face,
            3 => Neck,
            4 => UpperClothes,
            5 => Dress,
            6 => LowerClothes,
            7 => TorsoSkin,
            8 => Arms,
            9 => Hands,
            10 => Legs,
            11 => Feet,
            _ => return None,
        })
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Classes that are never inpainted.
    pub fn is_hand_or_foot(self) -> bool {
        matches!(self, ParseLabel::Hands | ParseLabel::Feet)
    }
}

/// Label raster over [`ParseLabel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<ParseLabel>,
}

impl LabelMap {
    pub fn filled(height: usize, width: usize, label: ParseLabel) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> ParseLabel {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: ParseLabel) {
        self.data[y * self.width + x] = label;
    }

    /// Validates raw ids against the label set.
    pub fn from_ids(height: usize, width: usize, ids: &[u8], path: &str) -> Result<Self, DataError> {
        let data = ids
            .iter()
            .map(|&id| {
                ParseLabel::from_id(id).ok_or(DataError::LabelSetViolation {
                    path: path.to_string(),
                    id,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn ids(&self) -> Vec<u8> {
        self.data.iter().map(|l| l.id()).collect()
    }

    pub fn count(&self, label: ParseLabel) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

/// Body keypoints in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Joint {
    Neck = 0,
    RightShoulder,
    LeftShoulder,
    RightElbow,
    LeftElbow,
    RightWrist,
    LeftWrist,
    RightHip,
    LeftHip,
    RightKnee,
    LeftKnee,
    RightAnkle,
    LeftAnkle,
}

impl Joint {
    pub const COUNT: usize = 13;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Keypoints indexed by [`Joint`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub keypoints: Vec<Keypoint>,
}

impl Pose {
    pub fn joint(&self, j: Joint) -> Option<&Keypoint> {
        self.keypoints.get(j as usize)
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct PoseFile {
    pub category: Category,
    pub keypoints: Vec<[f64; 3]>,
}

/// One person/clothing pair with everything the mask engine and model need.
#[derive(Debug, Clone, PartialEq)]
pub struct TryOnSample {
    pub sample_id: String,
    pub person_id: String,
    pub clothing_id: String,
    pub person: RgbImage,
    pub clothing: RgbImage,
    pub agnostic: RgbImage,
    pub parsing: LabelMap,
    pub pose: Pose,
    pub category: Category,
}

impl TryOnSample {
    pub fn height(&self) -> usize {
        self.person.height
    }

    pub fn width(&self) -> usize {
        self.person.width
    }

    /// Checks the shared-shape and keypoint-bounds invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        let (h, w) = (self.person.height, self.person.width);
        for (name, hh, ww) in [
            ("clothing", self.clothing.height, self.clothing.width),
            ("agnostic", self.agnostic.height, self.agnostic.width),
            ("parsing", self.parsing.height, self.parsing.width),
        ] {
            if hh != h || ww != w {
                return Err(DataError::Malformed {
                    what: format!("sample {}", self.sample_id),
                    detail: format!("{name} is {hh}x{ww}, person is {h}x{w}"),
                });
            }
        }
        for (i, k) in self.pose.keypoints.iter().enumerate() {
            if k.confidence > 0.0 && !(k.x >= 0.0 && k.x < w as f64 && k.y >= 0.0 && k.y < h as f64) {
                return Err(DataError::Malformed {
                    what: format!("sample {}", self.sample_id),
                    detail: format!("keypoint {i} at ({}, {}) outside {w}x{h}", k.x, k.y),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_ids_roundtrip() {
        for id in 0..ParseLabel::COUNT as u8 {
            assert_eq!(ParseLabel::from_id(id).unwrap().id(), id);
        }
        assert!(ParseLabel::from_id(12).is_none());
    }

    #[test]
    fn undeclared_id_is_rejected() {
        let err = LabelMap::from_ids(1, 2, &[0, 200], "x.png").unwrap_err();
        assert!(matches!(err, DataError::LabelSetViolation { id: 200, .. }));
    }
}
