//! Middlebury `.flo`: "PIEH", u32 width, u32 height, interleaved f32 (u, v).
//! All fields little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::FlowField;

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
const HEADER_LEN: usize = 12;
/// Sanity bound per side, matching the reference reader.
pub const FLO_MAX_SIDE: u64 = 99_999;

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let (w, h) = flow.dims();
    if w as u64 > FLO_MAX_SIDE || h as u64 > FLO_MAX_SIDE {
        return Err(Error::DimensionOverflow {
            width: w as u64,
            height: h as u64,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + flow.as_slice().len() * 4);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for &x in flow.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(Error::BadMagic(String::from_utf8_lossy(&bytes[..4]).into_owned()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    if w > FLO_MAX_SIDE || h > FLO_MAX_SIDE {
        return Err(Error::DimensionOverflow { width: w, height: h });
    }
    let (w, h) = (w as usize, h as usize);
    let expected = HEADER_LEN + w * h * 8;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FlowField::from_interleaved(w, h, data)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_flo(flow)?)?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flo(&fs::read(path)?)
}
