//! Binary checkpoint format:
//!
//! ```text
//! "NAVW" | version: u32 | record*
//! record = name_len: u32 | name bytes | ndims: u32 | dims: u32 * ndims | payload: f32 * prod(dims)
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};
use std::sync::Arc;

use super::params::{ParamVector, Registry};
use crate::error::{data_err, NavError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NAVW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type Checkpoint = ParamVector<f32>;

pub fn write_checkpoint<W: Write>(mut out: W, params: &ParamVector<f32>) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, slot) in params.registry.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(slot.shape.len() as u32).to_le_bytes())?;
        for &d in &slot.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(slot.len() * 4);
        for v in &params.flat[slot.range()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let Some(chunk) = bytes.get(*pos..*pos + 4) else {
        return data_err("checkpoint truncated");
    };
    *pos += 4;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamVector<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return data_err("not a NAVW checkpoint");
    }
    let mut pos = 4;
    let version = read_u32(&bytes, &mut pos)?;
    if version != CHECKPOINT_VERSION {
        return data_err(format!("unsupported checkpoint version {version}"));
    }
    let mut registry = Registry::new();
    let mut flat = Vec::new();
    while pos < bytes.len() {
        let name_len = read_u32(&bytes, &mut pos)? as usize;
        let Some(name) = bytes.get(pos..pos + name_len) else {
            return data_err("checkpoint truncated in record name");
        };
        let name = std::str::from_utf8(name).map_err(|_| NavError::Data("record name is not utf-8".into()))?;
        pos += name_len;
        let ndims = read_u32(&bytes, &mut pos)? as usize;
        if ndims > 8 {
            return data_err(format!("record `{name}` has {ndims} dims"));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u32(&bytes, &mut pos)? as usize);
        }
        let slot = registry.register(name, &dims).map_err(|e| NavError::Data(e.to_string()))?;
        let n = slot.len();
        let Some(payload) = bytes.get(pos..pos + 4 * n) else {
            return data_err(format!("checkpoint truncated in payload of `{name}`"));
        };
        flat.extend(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        pos += 4 * n;
    }
    Ok(ParamVector { registry: Arc::new(registry), flat })
}
