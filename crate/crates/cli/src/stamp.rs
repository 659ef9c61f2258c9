//! Content digests, stage stamps, atomic writes and the output-directory lock.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const STAMP_FILE: &str = ".stamp.json";
pub const LOCK_FILE: &str = ".lock";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let mut file = File::open(path).map_err(CliError::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest of a value's JSON form; used for configuration subsets.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    digest_bytes(&serde_json::to_vec(value).expect("configuration serializes"))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(CliError::io(&tmp))?;
        f.write_all(bytes).map_err(CliError::io(&tmp))?;
        f.sync_all().map_err(CliError::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// What a stage consumed and produced. `upstream` maps each prerequisite
/// stage to the digest of its stamp file, so any change upstream changes
/// every stamp downstream of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub tool_version: String,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub upstream: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Stamp {
    pub fn read(dir: &Path) -> Result<Option<(Stamp, String)>, CliError> {
        let path = dir.join(STAMP_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(CliError::Io { path, source: e }),
        };
        let stamp: Stamp = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Stale(format!("{} is unreadable: {e}", path.display())))?;
        Ok(Some((stamp, digest_bytes(&bytes))))
    }

    pub fn write(&self, dir: &Path) -> Result<String, CliError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("stamp serializes");
        bytes.push(b'\n');
        write_atomic(&dir.join(STAMP_FILE), &bytes)?;
        Ok(digest_bytes(&bytes))
    }

    /// First output file whose content no longer matches, if any.
    pub fn modified_output(&self, dir: &Path) -> Result<Option<String>, CliError> {
        for (name, digest) in &self.outputs {
            let path = dir.join(name);
            if !path.exists() || &digest_file(&path)? != digest {
                return Ok(Some(name.clone()));
            }
        }
        Ok(None)
    }
}

/// Exclusive ownership of an output directory for one run.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
