//! Run manifests: what produced an artifact directory and from which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use knobs_core::report;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file, or of a directory as the sorted list of its files'
/// names and hashes (the manifest itself excluded).
pub fn hash_path(path: &Path) -> CliResult<String> {
    let meta = fs::metadata(path).map_err(|e| io_error(path, e))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        return Ok(sha256_hex(&bytes));
    }
    let mut names: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| io_error(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE))
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let name = p.file_name().expect("file name").to_string_lossy().into_owned();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(hash_path(&p)?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    knobs_core::Error::Io {
        path: path.to_owned(),
        source: e,
    }
    .into()
}

/// Hash of a resolved configuration (stable JSON). The output directory is
/// left out: it names where artifacts go, not what they contain.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Value::Object(m) = &mut v {
        m.remove("out");
    }
    sha256_hex(report::to_stable_json(&v).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub config_hash: String,
    pub inputs: BTreeMap<String, InputRecord>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seed: Option<u64>) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            config_hash: config_hash(config),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let sha256 = hash_path(path)?;
        self.inputs.insert(
            name.to_owned(),
            InputRecord {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    /// Records the hash of every file written to `dir` and writes the manifest.
    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_error(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_name().expect("file name").to_string_lossy().into_owned();
            self.outputs.insert(name, hash_path(&f)?);
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, report::to_stable_json_pretty(&self)).map_err(|e| io_error(&path, e))
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}
