//! Parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   b"GRADCKPT"
//! version  u32
//! hlen     u64       length of the JSON header
//! header   hlen      {"params":[{"name":..,"shape":[..]}..],"meta":{..}}
//! payload  f64 LE    parameters concatenated in header order
//! ```
//!
//! The same framing (with a different magic) is reused for other binary
//! artifacts through [`write_framed`] / [`read_framed`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    params: Vec<ParamEntry>,
    meta: Value,
}

/// Writes `magic`, `version`, a JSON header and a flat f64 payload.
pub fn write_framed<W: Write>(
    mut w: W,
    magic: &[u8; 8],
    version: u32,
    header: &Value,
    payload: &[f64],
) -> Result<()> {
    let header = serde_json::to_vec(header)
        .map_err(|e| GradError::Checkpoint(format!("header encode: {e}")))?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Inverse of [`write_framed`]; returns `(version, header, payload)`.
pub fn read_framed<R: Read>(mut r: R, magic: &[u8; 8]) -> Result<(u32, Value, Vec<f64>)> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(GradError::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header)?;
    let header: Value = serde_json::from_slice(&header)
        .map_err(|e| GradError::Checkpoint(format!("header decode: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(GradError::Checkpoint(format!(
            "payload of {} bytes is not a whole number of f64s",
            rest.len()
        )));
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((version, header, payload))
}

pub fn save_checkpoint<W: Write>(w: W, store: &ParamStore, meta: Value) -> Result<()> {
    let params: Vec<ParamEntry> = store
        .named()
        .map(|(name, t)| ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let header = serde_json::to_value(Header { params, meta })
        .map_err(|e| GradError::Checkpoint(e.to_string()))?;
    let payload: Vec<f64> = store.named().flat_map(|(_, t)| t.data().iter().copied()).collect();
    write_framed(w, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &header, &payload)
}

/// Serialises a store into bytes.
pub fn checkpoint_bytes(store: &ParamStore, meta: Value) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    save_checkpoint(&mut buf, store, meta)?;
    Ok(buf)
}

/// Reads a checkpoint as named tensors plus its metadata.
pub fn load_checkpoint<R: Read>(r: R) -> Result<(Vec<(String, Tensor)>, Value)> {
    let (version, header, payload) = read_framed(r, CHECKPOINT_MAGIC)?;
    if version != CHECKPOINT_VERSION {
        return Err(GradError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header: Header =
        serde_json::from_value(header).map_err(|e| GradError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(header.params.len());
    let mut offset = 0;
    for p in header.params {
        let n: usize = p.shape.iter().product();
        if offset + n > payload.len() {
            return Err(GradError::Checkpoint(format!(
                "payload truncated at parameter `{}`",
                p.name
            )));
        }
        let t = Tensor::new(p.shape, payload[offset..offset + n].to_vec())?;
        offset += n;
        out.push((p.name, t));
    }
    if offset != payload.len() {
        return Err(GradError::Checkpoint("trailing payload data".into()));
    }
    Ok((out, header.meta))
}

/// Overwrites the values of `store` from a checkpoint with matching names
/// and shapes.
pub fn load_into<R: Read>(r: R, store: &mut ParamStore) -> Result<Value> {
    let (params, meta) = load_checkpoint(r)?;
    if params.len() != store.len() {
        return Err(GradError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            params.len(),
            store.len()
        )));
    }
    for (name, t) in params {
        let id = store
            .find(&name)
            .ok_or_else(|| GradError::Checkpoint(format!("unknown parameter `{name}`")))?;
        if store.value(id).shape() != t.shape() {
            return Err(GradError::Checkpoint(format!(
                "parameter `{name}`: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_meta() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap());
        store.add("b", Tensor::vector(vec![0.1]));
        let bytes = checkpoint_bytes(&store, serde_json::json!({"seed": 7})).unwrap();
        let mut other = store.clone();
        *other.value_mut(other.find("b").unwrap()) = Tensor::vector(vec![9.0]);
        let meta = load_into(bytes.as_slice(), &mut other).unwrap();
        assert_eq!(meta["seed"], 7);
        for ((_, x), (_, y)) in store.named().zip(other.named()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = checkpoint_bytes(&ParamStore::new(), Value::Null).unwrap();
        bytes[0] = b'X';
        assert!(load_checkpoint(bytes.as_slice()).is_err());
    }
}
