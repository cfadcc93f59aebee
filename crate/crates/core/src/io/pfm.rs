//! Grayscale PFM ("Pf"). A negative scale marks little-endian samples; rows
//! are stored bottom-up.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Grid;

/// Encodes as little-endian with scale -1. Samples are stored as f32.
pub fn encode_pfm(grid: &Grid<f64>) -> Vec<u8> {
    let (w, h) = grid.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(*grid.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited header token, returning it and the rest.
fn token(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let start = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .ok_or_else(|| Error::Parse("unexpected end of PFM header".into()))?;
    let rest = &bytes[start..];
    let len = rest.iter().position(|b| b.is_ascii_whitespace()).unwrap_or(rest.len());
    let tok = std::str::from_utf8(&rest[..len]).map_err(|_| Error::Parse("non-ASCII PFM header".into()))?;
    Ok((tok, &rest[len..]))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Grid<f64>> {
    let (magic, rest) = token(bytes)?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::Parse("color PFM is not supported".into())),
        other => return Err(Error::BadMagic(other.to_owned())),
    }
    let (w, rest) = token(rest)?;
    let (h, rest) = token(rest)?;
    let (scale, rest) = token(rest)?;
    let parse_dim = |s: &str| s.parse::<u64>().map_err(|_| Error::Parse(format!("bad PFM dimension '{s}'")));
    let (w64, h64) = (parse_dim(w)?, parse_dim(h)?);
    let scale: f64 = scale
        .parse()
        .map_err(|_| Error::Parse(format!("bad PFM scale '{scale}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Parse(format!("bad PFM scale {scale}")));
    }
    let n = w64
        .checked_mul(h64)
        .and_then(|n| n.checked_mul(4))
        .filter(|n| *n <= isize::MAX as u64)
        .ok_or(Error::DimensionOverflow { width: w64, height: h64 })?;
    // exactly one whitespace byte separates the header from the payload
    if rest.is_empty() {
        return Err(Error::TruncatedFile { expected: n as usize, found: 0 });
    }
    let payload = &rest[1..];
    let (w, h) = (w64 as usize, h64 as usize);
    if payload.len() < n as usize {
        return Err(Error::TruncatedFile {
            expected: n as usize,
            found: payload.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; w * h];
    for (i, c) in payload[..n as usize].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = c.try_into().unwrap();
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, yb) = (i % w, i / w);
        data[(h - 1 - yb) * w + x] = v as f64;
    }
    Grid::from_vec(w, h, data)
}

pub fn write_pfm(grid: &Grid<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pfm(grid))?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    decode_pfm(&fs::read(path)?)
}
