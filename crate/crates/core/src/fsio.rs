use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes via a sibling temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn f32_blob<'a>(arrays: impl Iterator<Item = &'a [f64]>) -> Vec<u8> {
    let mut out = Vec::new();
    for a in arrays {
        for &x in a {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub(crate) fn read_f32s(bytes: &[u8], offset: &mut usize, n: usize) -> Result<Vec<f64>> {
    let end = *offset + 4 * n;
    let chunk = bytes
        .get(*offset..end)
        .ok_or_else(|| Error::config("parameter blob is shorter than the manifest declares"))?;
    *offset = end;
    Ok(chunk
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}
