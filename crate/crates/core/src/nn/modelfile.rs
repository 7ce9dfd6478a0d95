//! `KLSF` model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "KLSF" | version u32 | header_len u32 | header JSON bytes | param_count u32
//! then per parameter:
//!   name_len u32 | name bytes | rank u32 | dims u32 * rank | values f32 * prod(dims)
//! ```

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::ParamStore;
use super::NnError;

pub const MODEL_MAGIC: &[u8; 4] = b"KLSF";
pub const MODEL_VERSION: u32 = 1;

pub fn write_model<W: Write, H: Serialize>(
    mut w: W,
    header: &H,
    params: &ParamStore,
) -> Result<(), NnError> {
    let header = serde_json::to_vec(header).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for d in &p.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for v in &p.value {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn model_to_bytes<H: Serialize>(header: &H, params: &ParamStore) -> Result<Vec<u8>, NnError> {
    let mut out = Vec::new();
    write_model(&mut out, header, params)?;
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| NnError::Format(format!("truncated model file while reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_vec<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>, NnError> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|_| NnError::Format(format!("truncated model file while reading {what}")))?;
    Ok(b)
}

pub fn read_model<R: Read, H: DeserializeOwned>(mut r: R) -> Result<(H, ParamStore), NnError> {
    let magic = read_vec(&mut r, 4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(NnError::Format("not a KLSF model file (bad magic)".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != MODEL_VERSION {
        return Err(NnError::Format(format!("unsupported model version {version}")));
    }
    let hlen = read_u32(&mut r, "header length")? as usize;
    let header = read_vec(&mut r, hlen, "header")?;
    let header: H =
        serde_json::from_slice(&header).map_err(|e| NnError::Format(format!("model header: {e}")))?;
    let count = read_u32(&mut r, "parameter count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r, "parameter name length")? as usize;
        let name = String::from_utf8(read_vec(&mut r, nlen, "parameter name")?)
            .map_err(|_| NnError::Format("parameter name is not UTF-8".into()))?;
        if params.id(&name).is_some() {
            return Err(NnError::Format(format!("duplicate parameter {name}")));
        }
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = read_vec(&mut r, n * 4, &format!("values of {name}"))?;
        let value = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.insert(&name, &shape, value);
    }
    Ok((header, params))
}
