use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, DataError, LabelMap, Pose, PoseFile, TryOnSample};
use crate::data::Keypoint;
use crate::raster::{GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    Paired,
    Unpaired,
}

impl Pairing {
    pub fn as_str(self) -> &'static str {
        match self {
            Pairing::Paired => "paired",
            Pairing::Unpaired => "unpaired",
        }
    }
}

/// Ordered list of (person, clothing) pairs for one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root_path: PathBuf,
    pub split: Split,
    pub pairing: Pairing,
    pub entries: Vec<(String, String)>,
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.as_str())
}

fn person_files(dir: &Path, id: &str) -> [PathBuf; 4] {
    [
        dir.join("image").join(format!("{id}.png")),
        dir.join("image-parse").join(format!("{id}.png")),
        dir.join("pose").join(format!("{id}.json")),
        dir.join("agnostic").join(format!("{id}.png")),
    ]
}

fn cloth_file(dir: &Path, id: &str) -> PathBuf {
    dir.join("cloth").join(format!("{id}.png"))
}

fn require(path: &Path) -> Result<(), DataError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DataError::MissingFile(path.display().to_string()))
    }
}

impl DatasetIndex {
    pub fn pairs_path(root: &Path, split: Split, pairing: Pairing) -> PathBuf {
        split_dir(root, split).join(format!("pairs_{}.txt", pairing.as_str()))
    }

    /// Reads the pair list and checks every referenced asset exists.
    pub fn build(root: &Path, split: Split, pairing: Pairing) -> Result<Self, DataError> {
        let pairs = Self::pairs_path(root, split, pairing);
        require(&pairs)?;
        let text = fs::read_to_string(&pairs).map_err(io_err(&pairs))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(p), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(DataError::Malformed {
                    what: pairs.display().to_string(),
                    detail: format!("line {} is not a whitespace-separated pair", lineno + 1),
                });
            };
            if pairing == Pairing::Paired && p != c {
                return Err(DataError::Malformed {
                    what: pairs.display().to_string(),
                    detail: format!("paired entry {p} {c} mixes ids"),
                });
            }
            entries.push((p.to_string(), c.to_string()));
        }
        let dir = split_dir(root, split);
        for (p, c) in &entries {
            for f in person_files(&dir, p) {
                require(&f)?;
            }
            require(&cloth_file(&dir, c))?;
        }
        Ok(Self {
            root_path: root.to_path_buf(),
            split,
            pairing,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads entry `entry_idx` of `index`, decoding and validating all assets.
pub fn load_sample(index: &DatasetIndex, entry_idx: usize) -> Result<TryOnSample, DataError> {
    let (person_id, clothing_id) =
        index
            .entries
            .get(entry_idx)
            .ok_or(DataError::EntryOutOfRange {
                index: entry_idx,
                len: index.entries.len(),
            })?;
    let dir = split_dir(&index.root_path, index.split);
    let [image_p, parse_p, pose_p, agnostic_p] = person_files(&dir, person_id);
    let cloth_p = cloth_file(&dir, clothing_id);
    for f in [&image_p, &parse_p, &pose_p, &agnostic_p, &cloth_p] {
        require(f)?;
    }

    let person = RgbImage::load_png(&image_p)?;
    let clothing = RgbImage::load_png(&cloth_p)?;
    let agnostic = RgbImage::load_png(&agnostic_p)?;
    let parse_raw = GrayImage::load_png(&parse_p)?;
    let parsing = LabelMap::from_ids(
        parse_raw.height,
        parse_raw.width,
        &parse_raw.data,
        &parse_p.display().to_string(),
    )?;
    let pose_text = fs::read_to_string(&pose_p).map_err(io_err(&pose_p))?;
    let pose_file: PoseFile = serde_json::from_str(&pose_text).map_err(|e| DataError::Malformed {
        what: pose_p.display().to_string(),
        detail: e.to_string(),
    })?;
    let pose = Pose {
        keypoints: pose_file
            .keypoints
            .iter()
            .map(|&[x, y, confidence]| Keypoint { x, y, confidence })
            .collect(),
    };

    let sample_id = if person_id == clothing_id {
        person_id.clone()
    } else {
        format!("{person_id}__{clothing_id}")
    };
    let sample = TryOnSample {
        sample_id,
        person_id: person_id.clone(),
        clothing_id: clothing_id.clone(),
        person,
        clothing,
        agnostic,
        parsing,
        pose,
        category: pose_file.category,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes a sample's person-side assets under its person id and its garment
/// under its clothing id.
pub fn save_sample(root: &Path, split: Split, sample: &TryOnSample) -> Result<(), DataError> {
    sample.validate()?;
    let dir = split_dir(root, split);
    for sub in ["image", "cloth", "image-parse", "pose", "agnostic"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let [image_p, parse_p, pose_p, agnostic_p] = person_files(&dir, &sample.person_id);
    sample.person.save_png(&image_p)?;
    sample.agnostic.save_png(&agnostic_p)?;
    sample.clothing.save_png(&cloth_file(&dir, &sample.clothing_id))?;
    GrayImage {
        height: sample.parsing.height,
        width: sample.parsing.width,
        data: sample.parsing.ids(),
    }
    .save_png(&parse_p)?;
    let pose = PoseFile {
        category: sample.category,
        keypoints: sample
            .pose
            .keypoints
            .iter()
            .map(|k| [k.x, k.y, k.confidence])
            .collect(),
    };
    let text = serde_json::to_string_pretty(&pose).expect("pose serializes");
    fs::write(&pose_p, text).map_err(io_err(&pose_p))?;
    Ok(())
}

/// Writes a pair list, one `person clothing` pair per line.
pub fn write_pairs(
    root: &Path,
    split: Split,
    pairing: Pairing,
    entries: &[(String, String)],
) -> Result<(), DataError> {
    let path = DatasetIndex::pairs_path(root, split, pairing);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut text = String::new();
    for (p, c) in entries {
        text.push_str(p);
        text.push(' ');
        text.push_str(c);
        text.push('\n');
    }
    fs::write(&path, text).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_dataset, SyntheticConfig};

    fn tree() -> (tempfile::TempDir, DatasetIndex, DatasetIndex) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            count: 4,
            seed: 3,
            ..SyntheticConfig::default()
        };
        generate_dataset(dir.path(), Split::Test, &cfg).unwrap();
        let paired = DatasetIndex::build(dir.path(), Split::Test, Pairing::Paired).unwrap();
        let unpaired = DatasetIndex::build(dir.path(), Split::Test, Pairing::Unpaired).unwrap();
        (dir, paired, unpaired)
    }

    #[test]
    fn paired_entries_share_ids() {
        let (_d, paired, _) = tree();
        let s = load_sample(&paired, 0).unwrap();
        assert_eq!(s.person_id, s.clothing_id);
    }

    #[test]
    fn unpaired_entry_mixes_person_and_clothing() {
        let (_d, _, unpaired) = tree();
        let s = load_sample(&unpaired, 0).unwrap();
        assert_ne!(s.person_id, s.clothing_id);
        let own = load_sample(&DatasetIndex::build(&unpaired.root_path, Split::Test, Pairing::Paired).unwrap(), 0)
            .unwrap();
        assert_eq!(s.person, own.person);
    }

    #[test]
    fn missing_parse_file_is_reported() {
        let (d, paired, _) = tree();
        let id = &paired.entries[1].0;
        fs::remove_file(d.path().join("test/image-parse").join(format!("{id}.png"))).unwrap();
        assert!(matches!(load_sample(&paired, 1), Err(DataError::MissingFile(_))));
        assert!(matches!(
            DatasetIndex::build(d.path(), Split::Test, Pairing::Paired),
            Err(DataError::MissingFile(_))
        ));
    }

    #[test]
    fn index_build_is_deterministic() {
        let (d, a, _) = tree();
        let b = DatasetIndex::build(d.path(), Split::Test, Pairing::Paired).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_save_load_is_bit_identical() {
        let (_d, paired, _) = tree();
        let s = load_sample(&paired, 2).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_sample(out.path(), Split::Test, &s).unwrap();
        write_pairs(out.path(), Split::Test, Pairing::Paired, &[(s.person_id.clone(), s.clothing_id.clone())]).unwrap();
        let idx = DatasetIndex::build(out.path(), Split::Test, Pairing::Paired).unwrap();
        assert_eq!(load_sample(&idx, 0).unwrap(), s);
    }

    #[test]
    fn out_of_range_entry() {
        let (_d, paired, _) = tree();
        assert!(matches!(
            load_sample(&paired, 99),
            Err(DataError::EntryOutOfRange { index: 99, len: 4 })
        ));
    }
}
