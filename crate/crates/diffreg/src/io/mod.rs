//! File formats: point clouds, matrices, parameter archives, scene bundles,
//! trajectories and staged output writing.

pub mod bundle;
pub mod matrix;
pub mod params;
pub mod ply;
pub mod trajectory;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// Version written into every JSON output and archive manifest.
pub const FORMAT_VERSION: u32 = 1;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_string(path)?).map_err(|e| CliError::format(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serialisable value");
    out.push(b'\n');
    out
}

/// Files collected in memory and written together, so a failed command
/// leaves no partial outputs behind.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `bytes` for `relative` (below the output directory).
    pub fn add(&mut self, relative: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((relative.into(), bytes));
    }

    pub fn add_json<T: Serialize + ?Sized>(&mut self, relative: impl Into<PathBuf>, value: &T) {
        self.add(relative, json_bytes(value));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    /// Writes every file below `dir`, each through a temporary file and an
    /// atomic rename. Files already written are removed if a later one fails.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (relative, bytes) in self.files {
            let path = dir.join(&relative);
            match write_atomic(&path, &bytes) {
                Ok(()) => written.push(path),
                Err(e) => {
                    for p in &written {
                        let _ = std::fs::remove_file(p);
                    }
                    return Err(e);
                }
            }
        }
        Ok(written)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| CliError::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serialisable value");
    hex::encode(Sha256::digest(bytes))
}
