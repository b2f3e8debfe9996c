//! Append-log caption cache.
//!
//! The store is a newline-delimited JSON file. Every write rewrites the log
//! to a sibling temp file and renames it into place, so readers see either
//! the old or the new log and never a partial line. Lookups compact the log
//! in memory; the last record for a key wins.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{io_err, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Person,
    Clothing,
}

impl Subject {
    pub fn as_str(self) -> &'static str {
        match self {
            Subject::Person => "person",
            Subject::Clothing => "clothing",
        }
    }
}

/// Attribute captions predicted for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub subject: Subject,
    pub captions: BTreeMap<String, String>,
    pub lmm_model_id: String,
    /// RFC 3339 timestamp.
    pub created_at: String,
}

impl CaptionRecord {
    fn check(&self) -> Result<(), DataError> {
        if self.image_id.is_empty() {
            return Err(DataError::InvalidRecord("empty image_id".into()));
        }
        if self.captions.is_empty() {
            return Err(DataError::InvalidRecord(format!(
                "record for {} has no captions",
                self.image_id
            )));
        }
        Ok(())
    }
}

// In-process writers take this lock so read-modify-rename cycles don't interleave.
static WRITE_LOCK: Mutex<()> = Mutex::new(());

fn read_log(store_path: &Path) -> Result<Vec<CaptionRecord>, DataError> {
    let text = match fs::read_to_string(store_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(store_path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DataError::StoreCorrupt {
                path: store_path.display().to_string(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

fn write_log(store_path: &Path, records: &[CaptionRecord]) -> Result<(), DataError> {
    let parent = store_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let file_name = store_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "captions.jsonl".into());
    let tmp = parent.join(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        for r in records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(f, "{line}").map_err(io_err(&tmp))?;
        }
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, store_path).map_err(io_err(store_path))
}

/// Appends `record` to the store at `store_path`.
pub fn cache_captions(record: &CaptionRecord, store_path: &Path) -> Result<(), DataError> {
    record.check()?;
    let _guard = WRITE_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut log = read_log(store_path)?;
    log.push(record.clone());
    write_log(store_path, &log)
}

/// Most recent record for `(image_id, subject)`, if any.
pub fn lookup_captions(
    image_id: &str,
    subject: Subject,
    store_path: &Path,
) -> Result<Option<CaptionRecord>, DataError> {
    Ok(read_log(store_path)?
        .into_iter()
        .rev()
        .find(|r| r.image_id == image_id && r.subject == subject))
}

/// Rewrites the log keeping only the latest record per key, in first-seen key order.
pub fn compact_store(store_path: &Path) -> Result<usize, DataError> {
    let _guard = WRITE_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let log = read_log(store_path)?;
    let mut order: Vec<(String, Subject)> = Vec::new();
    let mut latest: HashMap<(String, Subject), CaptionRecord> = HashMap::new();
    for r in log {
        let key = (r.image_id.clone(), r.subject);
        if !latest.contains_key(&key) {
            order.push(key.clone());
        }
        latest.insert(key, r);
    }
    let compacted: Vec<CaptionRecord> = order.iter().map(|k| latest[k].clone()).collect();
    write_log(store_path, &compacted)?;
    Ok(compacted.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, material: &str) -> CaptionRecord {
        CaptionRecord {
            image_id: id.into(),
            subject: Subject::Clothing,
            captions: [("material".to_string(), material.to_string())].into(),
            lmm_model_id: "mock".into(),
            created_at: "1970-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn cache_then_lookup_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("captions.jsonl");
        let r = record("c1", "cotton");
        cache_captions(&r, &store).unwrap();
        assert_eq!(lookup_captions("c1", Subject::Clothing, &store).unwrap(), Some(r));
    }

    #[test]
    fn never_cached_is_absent() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("captions.jsonl");
        assert_eq!(lookup_captions("zz", Subject::Person, &store).unwrap(), None);
        cache_captions(&record("c1", "silk"), &store).unwrap();
        assert_eq!(lookup_captions("c1", Subject::Person, &store).unwrap(), None);
    }

    #[test]
    fn last_writer_wins_and_compaction_keeps_it() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("captions.jsonl");
        cache_captions(&record("c1", "cotton"), &store).unwrap();
        cache_captions(&record("c2", "denim"), &store).unwrap();
        cache_captions(&record("c1", "linen"), &store).unwrap();
        let got = lookup_captions("c1", Subject::Clothing, &store).unwrap().unwrap();
        assert_eq!(got.captions["material"], "linen");
        assert_eq!(compact_store(&store).unwrap(), 2);
        let got = lookup_captions("c1", Subject::Clothing, &store).unwrap().unwrap();
        assert_eq!(got.captions["material"], "linen");
    }

    #[test]
    fn corrupt_store_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("captions.jsonl");
        fs::write(&store, "{not json\n").unwrap();
        assert!(matches!(
            lookup_captions("c1", Subject::Clothing, &store),
            Err(DataError::StoreCorrupt { line: 1, .. })
        ));
    }
}
