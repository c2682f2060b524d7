use std::path::Path;

use diffreg_core::matrixspace::MatchMatrix;

use crate::error::{CliError, Result};

/// Little-endian `u32 N, u32 M`, then `N·M` row-major `f64`.
pub fn to_bytes(m: &MatchMatrix) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(8 + 8 * rows * cols);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<MatchMatrix> {
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    if bytes.len() < 8 {
        return Err(CliError::format(path, "matrix header truncated"));
    }
    let (rows, cols) = (word(0), word(1));
    if bytes.len() != 8 + 8 * rows * cols {
        return Err(CliError::format(
            path,
            format!("expected {} bytes for a {rows}x{cols} matrix, found {}", 8 + 8 * rows * cols, bytes.len()),
        ));
    }
    let data = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MatchMatrix::new(rows, cols, data).map_err(|e| CliError::format(path, e))
}

pub fn from_json(text: &str, path: &Path) -> Result<MatchMatrix> {
    let m: MatchMatrix = serde_json::from_str(text).map_err(|e| CliError::format(path, e))?;
    let (rows, cols) = m.shape();
    MatchMatrix::new(rows, cols, m.into_vec()).map_err(|e| CliError::format(path, e))
}

/// Reads a matrix as JSON when the extension is `.json`, binary otherwise.
pub fn read_matrix(path: &Path) -> Result<MatchMatrix> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        from_json(&super::read_string(path)?, path)
    } else {
        from_bytes(&super::read_bytes(path)?, path)
    }
}
