use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::pipeline::{io_err, write_file, CliError};

/// Written to `<output_dir>/manifests/<command>.json`. Contains no
/// timestamps or absolute paths, so identical runs give identical bytes.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_fingerprint: String,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
    /// Output path relative to the output directory → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let versions = [
            ("tryon-core".to_string(), tryon_core::VERSION.to_string()),
            ("vton".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]
        .into();
        Self {
            command: command.into(),
            config_fingerprint: tryon_core::eval::fingerprint(cfg),
            versions,
            seed: cfg.seed,
            outputs: BTreeMap::new(),
            details: Value::Null,
        }
    }

    /// Hashes the files at `rel` (relative to `root`) into `outputs`.
    pub fn record(&mut self, root: &Path, rel: &str) -> Result<(), CliError> {
        let p = root.join(rel);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        self.outputs.insert(rel.replace('\\', "/"), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes the manifest and returns its path relative to `root`.
    pub fn write(&self, root: &Path) -> Result<String, CliError> {
        let rel = format!("manifests/{}.json", self.command);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(&root.join(&rel), text.as_bytes())?;
        Ok(rel)
    }
}
