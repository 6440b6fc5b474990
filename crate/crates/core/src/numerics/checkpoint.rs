//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VBRG" | version: u32
//! repeated until EOF:
//!   path_len: u32 | path bytes (UTF-8) | rows: u32 | cols: u32 | rows·cols × f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VBRG";
pub const VERSION: u32 = 1;

/// Serializes the parameters of `store` (not gradients or optimizer state).
pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, m) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while !r.is_empty() {
        let len = read_u32(&mut r, "path length")? as usize;
        let path = take(&mut r, len, "path")?;
        let name = std::str::from_utf8(path)
            .map_err(|_| Error::Checkpoint("parameter path is not UTF-8".into()))?
            .to_string();
        let rows = read_u32(&mut r, "rows")? as usize;
        let cols = read_u32(&mut r, "cols")? as usize;
        let count = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` is too large")))?;
        let raw = take(&mut r, count, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if store.contains(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        store.insert(name, Matrix::from_vec(rows, cols, data)?);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    decode(&fs::read(path)?)
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(r, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn take<'a>(r: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
