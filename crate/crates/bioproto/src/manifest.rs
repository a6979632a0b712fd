//! `manifest.json`: what produced an output directory, with content hashes
//! of every input and output file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub output_schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    /// The command line, as parsed.
    pub command: serde_json::Value,
    pub inputs: Vec<FileHash>,
    /// Effective integrator settings; non-finite values are written as null.
    pub flow: serde_json::Value,
    pub seed: Option<u64>,
    pub runs: Option<u64>,
    pub out_dir: PathBuf,
    /// Relative to `out_dir`, sorted by path.
    pub outputs: Vec<FileHash>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

/// Hash every regular file in `dir` except the manifest itself.
pub fn hash_outputs(dir: &Path) -> io::Result<Vec<FileHash>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if !entry.file_type()?.is_file() || name == MANIFEST_FILE {
            continue;
        }
        out.push(FileHash {
            role: "output".into(),
            path: PathBuf::from(&name),
            sha256: sha256_file(&entry.path())?,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)
    }

    pub fn read(path: &Path) -> io::Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Inputs whose current content differs from the recorded hash.
    pub fn changed_inputs(&self) -> Vec<&FileHash> {
        self.inputs
            .iter()
            .filter(|f| sha256_file(&f.path).ok().as_deref() != Some(f.sha256.as_str()))
            .collect()
    }
}
