//! Run manifests: inputs and outputs with their SHA-256, the resolved
//! configuration and its hash, and the tool version.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::responses::write_json;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory as the digest of its sorted
/// `relative-path NUL file-digest LF` lines.
pub fn digest_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return Ok(sha256_hex(&bytes));
    }
    let mut files = Vec::new();
    collect(path, &mut files)?;
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        h.update(rel.to_string_lossy().replace('\\', "/").as_bytes());
        h.update([0]);
        h.update(sha256_hex(&bytes).as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.to_string_lossy().into_owned(),
                sha256: digest_path(p)?,
            })
        })
        .collect()
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, config: &T, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Self> {
        Ok(Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
        })
    }

    /// `<output>.manifest.json`, or `manifest.json` inside an output directory.
    pub fn location(primary_output: &Path) -> PathBuf {
        if primary_output.is_dir() {
            primary_output.join("manifest.json")
        } else {
            let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            primary_output.with_file_name(name)
        }
    }

    pub fn write(&self, primary_output: &Path) -> Result<PathBuf> {
        let path = Self::location(primary_output);
        write_json(&path, self)?;
        Ok(path)
    }
}
