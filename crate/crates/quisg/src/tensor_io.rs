//! Binary tensor maps, used for checkpoints and precomputed embeddings.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"QSGT"  u32 version  u32 count
//! count × { u32 name_len  name (UTF-8)  u32 ndim  ndim × u64 dim  f64 × prod(dims) }
//! ```
//!
//! Entries are written in name order, so equal maps give equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use quisg_core::{ParameterStore, Tensor};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QSGT";
pub const VERSION: u32 = 1;

pub type TensorMap = BTreeMap<String, Tensor>;

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut sorted: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for (name, t) in sorted {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| format!("truncated at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<TensorMap, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a tensor file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut out = TensorMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| format!("tensor name: {e}"))?.to_string();
        let ndim = r.u32()?;
        let (rows, cols) = match ndim {
            1 => (1, r.u64()? as usize),
            2 => (r.u64()? as usize, r.u64()? as usize),
            n => return Err(format!("tensor {name}: {n} dimensions, only 1 or 2 supported")),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| format!("tensor {name}: shape overflows"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| format!("tensor {name}: shape overflows"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::from_vec(rows, cols, data).map_err(|e| format!("tensor {name}: {e}"))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(format!("duplicate tensor {name}"));
        }
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok(out)
}

pub fn write(path: &Path, tensors: &TensorMap) -> Result<()> {
    fs::write(path, encode(tensors.iter().map(|(k, v)| (k.as_str(), v)))).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<TensorMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::format(path, reason))
}

/// Reads several files into one map; a name present in two files is an error.
pub fn read_merged(paths: &[impl AsRef<Path>]) -> Result<TensorMap> {
    let mut out = TensorMap::new();
    for p in paths {
        let p = p.as_ref();
        for (name, t) in read(p)? {
            if out.contains_key(&name) {
                return Err(Error::format(p, format!("tensor {name} also present in an earlier checkpoint")));
            }
            out.insert(name, t);
        }
    }
    Ok(out)
}

pub fn save_store(path: &Path, store: &ParameterStore) -> Result<()> {
    fs::write(path, encode(store.iter())).map_err(|e| Error::io(path, e))
}

/// Overwrites every parameter of `store` from `tensors`. Entries under
/// `prefix` that the store does not know are rejected; other prefixes are
/// ignored, so a merged map of several stages can be passed in.
pub fn load_store(store: &mut ParameterStore, tensors: &TensorMap, prefix: &str, origin: &Path) -> Result<()> {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let t = tensors.get(name).ok_or_else(|| Error::format(origin, format!("checkpoint lacks parameter {name}")))?;
        store.load(name, t.clone())?;
    }
    let scoped = format!("{prefix}.");
    if let Some(extra) = tensors.keys().find(|k| k.starts_with(&scoped) && !names.contains(k)) {
        return Err(Error::format(origin, format!("checkpoint parameter {extra} is not part of the configured model")));
    }
    Ok(())
}
