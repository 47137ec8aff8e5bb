//! Flat binary container of named `f64` tensors with a JSON header.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, the UTF-8 JSON
//! header, then every tensor payload as little-endian `f64`, in header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NMTKTNSR";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

pub fn write_container<W: Write>(
    mut w: W,
    meta: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let header = Header {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for t in tensors.values() {
        buf.clear();
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(serde_json::Value, BTreeMap<String, Tensor>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad tensor container magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let numel: usize = e.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if tensors.insert(e.name.clone(), Tensor::new(e.shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{}`", e.name)));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor payload".into()));
    }
    Ok((header.meta, tensors))
}

/// Writes to `path` through a temporary sibling and an atomic rename.
pub fn save_container(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    crate::io::write_atomic(path, |w| write_container(w, meta, tensors))
}

pub fn load_container(path: &Path) -> Result<(serde_json::Value, BTreeMap<String, Tensor>)> {
    let f = std::fs::File::open(path)?;
    read_container(std::io::BufReader::new(f))
}
