//! On-disk formats. Each artifact is a JSON manifest next to a payload of
//! little-endian IEEE-754 `f32` values, row-major, blocks concatenated in
//! manifest order, with each block's byte offset recorded in the manifest.

pub mod archive;
pub mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use archive::{corpus_from_entries, decode_archive, encode_archive, read_archive, write_archive, ArchiveEntry, ArchiveManifest};
pub use checkpoint::{Checkpoint, CheckpointManifest, TrainPosition};

/// Appends `m` as `f32` little-endian values.
pub(crate) fn push_f32(payload: &mut Vec<u8>, m: &Matrix) {
    payload.reserve(m.data().len() * 4);
    for &v in m.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Reads the `rows × cols` block at `offset`, checking bounds and
/// finiteness.
pub(crate) fn read_block(what: &'static str, payload: &[u8], offset: u64, rows: usize, cols: usize) -> Result<Matrix> {
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(what, format!("block {rows}×{cols} overflows")))?;
    let start = usize::try_from(offset).map_err(|_| Error::format(what, "offset out of range"))?;
    let end = start
        .checked_add(n)
        .filter(|&e| e <= payload.len())
        .ok_or_else(|| Error::format(what, format!("block at byte {start} of {n} bytes runs past the payload ({} bytes)", payload.len())))?;
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in payload[start..end].chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format(what, format!("non-finite value in block at byte {start}")));
        }
        data.push(v as f64);
    }
    Matrix::from_vec(rows, cols, data)
}

/// Payload file names are bare names resolved next to the manifest.
pub(crate) fn payload_path(manifest: &Path, payload: &str) -> Result<PathBuf> {
    if payload.is_empty() || payload.contains(['/', '\\']) || payload == "." || payload == ".." {
        return Err(Error::format("manifest", format!("payload name `{payload}` must be a plain file name")));
    }
    Ok(manifest.parent().unwrap_or(Path::new(".")).join(payload))
}

/// Writes through a temporary file and renames it into place, so a reader
/// never sees a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
