//! MAFT binary tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MAFT"
//! 4       1           version (1)
//! 5       1           dtype (1 = f64 little-endian)
//! 6       1           ndim
//! 7       4·ndim      dims, u32 little-endian
//! ..      8·Π dims    row-major payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{MafError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MAFT";
pub const VERSION: u8 = 1;
pub const DTYPE_F64_LE: u8 = 1;

/// Size in bytes of the encoded form of a tensor with the given shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    7 + 4 * shape.len() + 8 * shape.iter().product::<usize>()
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| MafError::Format(format!("{} dimensions exceed the 255 limit", t.ndim())))?;
    let mut out = Vec::with_capacity(encoded_len(t.shape()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F64_LE);
    out.push(ndim);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| MafError::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes one tensor from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, usize)> {
    if bytes.len() < 7 {
        return Err(MafError::Format(format!(
            "truncated header: {} bytes, need at least 7",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(MafError::Format(format!("bad magic {:?}, expected \"MAFT\"", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(MafError::Format(format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F64_LE {
        return Err(MafError::Format(format!("unsupported dtype code {}", bytes[5])));
    }
    let ndim = bytes[6] as usize;
    if ndim == 0 {
        return Err(MafError::Format("zero-dimensional tensor".into()));
    }
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(MafError::Format(format!(
            "truncated header: {} bytes, need {header}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(MafError::Format(format!("zero-sized dimension in {dims:?}")));
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| MafError::Format(format!("dimensions {dims:?} overflow")))?;
    let total = numel
        .checked_mul(8)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| MafError::Format(format!("dimensions {dims:?} overflow")))?;
    if bytes.len() < total {
        return Err(MafError::Format(format!(
            "truncated payload: have {} bytes, need {total}",
            bytes.len()
        )));
    }
    let data = bytes[header..total]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((Tensor::new(&dims, data)?, total))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode(t)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MafError::io(path, e))?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(MafError::Format(format!(
            "{} trailing bytes after tensor in {}",
            bytes.len() - used,
            path.display()
        )));
    }
    Ok(t)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| MafError::Contract(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        MafError::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_is_47_bytes() {
        let t = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(bytes.len(), 47);
        assert_eq!(&bytes[..7], b"MAFT\x01\x01\x02");
        assert_eq!(&bytes[7..15], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[15..23], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let t = Tensor::new(&[3], vec![1., 2., 3.]).unwrap();
        let good = encode(&t).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bad), Err(MafError::Format(m)) if m.contains("magic")));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(MafError::Format(m)) if m.contains("version")));

        let msg = decode(&good[..good.len() - 1]).unwrap_err().to_string();
        assert!(msg.contains("have 34 bytes, need 35"), "{msg}");
    }

    #[test]
    fn file_round_trip_and_trailing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.maft");
        let t = Tensor::new(&[2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 3.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        assert!(load_tensor(&path).unwrap().bit_eq(&t));

        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_tensor(&path), Err(MafError::Format(_))));
    }
}
