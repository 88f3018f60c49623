//! Binary archive of named `f64` matrices.
//!
//! Layout: the magic `DRARCH1\n`, a little-endian `u32` entry count, then per
//! entry a `u32` name length, the UTF-8 name, `u64` rows, `u64` cols and
//! `rows * cols` little-endian `f64` values in row-major order.

use std::fs;
use std::path::Path;

use dialrec_core::params::ParamStore;
use dialrec_core::Matrix;

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"DRARCH1\n";

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Matrix)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, m) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| HarnessError::Data(format!("archive truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| HarnessError::Data("archive dimension overflows".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(HarnessError::Data("not a parameter archive".into()));
    }
    let n = r.u32()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| HarnessError::Data("archive name is not UTF-8".into()))?;
        let rows = r.u64()?;
        let cols = r.u64()?;
        let count = rows.checked_mul(cols).filter(|c| c.checked_mul(8).is_some());
        let count = count.ok_or_else(|| HarnessError::Data(format!("{name}: dimensions overflow")))?;
        let raw = r.take(count * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(HarnessError::Data("trailing bytes after archive".into()));
    }
    Ok(out)
}

pub fn write_store(path: &Path, store: &ParamStore) -> Result<()> {
    fs::write(path, encode(store.iter())).map_err(|e| HarnessError::io(path, e))
}

pub fn read_store(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let mut store = ParamStore::new();
    for (name, m) in decode(&bytes)? {
        if store.id(&name).is_some() {
            return Err(HarnessError::Data(format!("duplicate array {name} in archive")));
        }
        store.add(name, m);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let a = Matrix::from_rows(&[vec![1.0, -2.5], vec![f64::MIN_POSITIVE, 3.0]]);
        let b = Matrix::zeros(0, 3);
        let bytes = encode([("a", &a), ("empty", &b)]);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, vec![("a".to_string(), a), ("empty".to_string(), b)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"NOTMAGIC").is_err());
    }
}
