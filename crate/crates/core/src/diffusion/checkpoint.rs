//! Single-file checkpoint format.
//!
//! ```text
//! magic "TVTOYCKP" | u32 version | u32 meta_len | meta (UTF-8 JSON) | u32 tensor_count
//! per tensor: u32 name_len | name | u8 dtype (0 = f64) | u32 ndim | u64 dims... | f64 payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::tensor::Matrix;
use super::DiffusionError;

pub const MAGIC: &[u8; 8] = b"TVTOYCKP";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

fn bad(msg: impl Into<String>) -> DiffusionError {
    DiffusionError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(meta: &str, tensors: &[(String, &Matrix)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols as u64).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N], DiffusionError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(b)
}

fn take_vec(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>, DiffusionError> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(bad("truncated checkpoint"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(b)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, Vec<(String, Matrix)>), DiffusionError> {
    let mut r = Cursor::new(bytes);
    if &take::<8>(&mut r)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(&mut r)?) as usize;
    let meta = String::from_utf8(take_vec(&mut r, meta_len)?).map_err(|_| bad("meta is not UTF-8"))?;
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut r)?) as usize;
        let name = String::from_utf8(take_vec(&mut r, name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let [dtype] = take::<1>(&mut r)?;
        if dtype != DTYPE_F64 {
            return Err(bad(format!("{name}: unsupported dtype {dtype}")));
        }
        let ndim = u32::from_le_bytes(take(&mut r)?);
        if ndim != 2 {
            return Err(bad(format!("{name}: expected 2 dims, found {ndim}")));
        }
        let rows = u64::from_le_bytes(take(&mut r)?) as usize;
        let cols = u64::from_le_bytes(take(&mut r)?) as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| bad(format!("{name}: shape overflows")))?;
        let raw = take_vec(&mut r, n.checked_mul(8).ok_or_else(|| bad("payload overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok((meta, tensors))
}

pub fn save_checkpoint(path: &Path, meta: &str, tensors: &[(String, &Matrix)]) -> Result<(), DiffusionError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DiffusionError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    fs::write(path, encode_checkpoint(meta, tensors)).map_err(|e| DiffusionError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<(String, Matrix)>), DiffusionError> {
    let bytes = fs::read(path).map_err(|e| DiffusionError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let a = Matrix::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.5);
        let b = Matrix::from_vec(1, 1, vec![f64::MIN_POSITIVE]).unwrap();
        let bytes = encode_checkpoint("{\"k\":1}", &[("a".into(), &a), ("b".into(), &b)]);
        let (meta, t) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        assert_eq!(t, vec![("a".to_string(), a), ("b".to_string(), b)]);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
