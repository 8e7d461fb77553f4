//! Versioned JSON documents, content hashes, atomic writes, the output-directory lock and
//! the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Writes through a temporary sibling and renames, so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    payload: &'a T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn<T> {
    format: String,
    version: u32,
    payload: T,
}

/// Canonical bytes of a `{format, version, payload}` document.
pub fn envelope_bytes<T: Serialize>(format: &str, payload: &T) -> Result<Vec<u8>> {
    let doc = EnvelopeOut { format, version: FORMAT_VERSION, payload };
    serde_json::to_vec(&doc).map_err(|e| CliError::Usage(format!("serializing {format}: {e}")))
}

/// Writes a versioned document and returns its hash.
pub fn write_json<T: Serialize>(path: &Path, format: &str, payload: &T) -> Result<String> {
    let bytes = envelope_bytes(format, payload)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let doc: EnvelopeIn<T> = serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e))?;
    if doc.format != format {
        return Err(CliError::format(path, format!("expected a {format} document, found {}", doc.format)));
    }
    if doc.version != FORMAT_VERSION {
        return Err(CliError::format(path, format!("unsupported {format} version {}", doc.version)));
    }
    Ok(doc.payload)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".pdmv.lock";

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "pdmv.manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub sha256: String,
    pub command: String,
    pub config_hash: String,
}

/// Hashes of the serialized bias when a stage starts and when its trajectories are done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub iteration: usize,
    pub bias_at_start: String,
    pub bias_at_end: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment: String,
    /// Seeds by role (`master`, `dynamics`, `production`, ...).
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    /// Output files by path relative to the output directory.
    pub files: BTreeMap<String, FileEntry>,
}

impl Manifest {
    /// Existing manifest of `dir`, or an empty one.
    pub fn load_or_new(dir: &Path, experiment: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            read_json(&path, MANIFEST_FORMAT)
        } else {
            Ok(Manifest { experiment: experiment.to_string(), ..Default::default() })
        }
    }

    /// Hashes `rel` (relative to `dir`) and records it.
    pub fn record(&mut self, dir: &Path, rel: &str, command: &str, config_hash: &str) -> Result<()> {
        let sha256 = file_sha256(&dir.join(rel))?;
        self.files.insert(
            rel.to_string(),
            FileEntry { sha256, command: command.to_string(), config_hash: config_hash.to_string() },
        );
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        write_json(&dir.join(MANIFEST_FILE), MANIFEST_FORMAT, self)
    }
}
