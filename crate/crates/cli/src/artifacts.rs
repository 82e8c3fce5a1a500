//! On-disk artifacts: atomic writes, hash-stamped envelopes, tree hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Files that record when and how a run happened rather than what it
/// produced; they are left out of [`tree_hash`].
pub const VOLATILE_FILES: &[&str] = &["run_log.json"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a value's JSON serialization.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("artifact values serialize"))
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact values serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Core(e.into()))
}

/// A stage output stamped with the hash of everything it was computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub input_hash: String,
    pub value: T,
}

/// The stored value at `path` if it was computed from `input_hash`.
pub fn load_current<T: DeserializeOwned>(path: &Path, input_hash: &str) -> Option<T> {
    let env: Envelope<T> = read_json(path).ok()?;
    (env.input_hash == input_hash).then_some(env.value)
}

pub fn store<T: Serialize>(path: &Path, input_hash: &str, value: &T) -> CliResult<()> {
    write_json(path, &Envelope { input_hash: input_hash.to_string(), value })
}

/// Content hash of an existing file.
pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over every file of a run directory (relative path and content
/// hash, in path order), skipping [`VOLATILE_FILES`].
pub fn tree_hash(root: &Path) -> CliResult<String> {
    let mut files = Vec::new();
    collect(root, root, &mut files)?;
    files.retain(|p| !VOLATILE_FILES.iter().any(|v| p == Path::new(v)));
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        h.update(name.as_bytes());
        h.update(b"\0");
        h.update(file_hash(&root.join(&rel))?.as_bytes());
        h.update(b"\n");
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
