//! `HSC1` cubes: magic, u32-LE `W, H, L`, then f32-LE values in band-major
//! order. `HSM1` masks: magic, u32-LE `W, H`, then one byte (0 or 1) per
//! pixel, row-major.

use std::path::Path;

use super::cube::{HsiCube, Mask};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const MASK_MAGIC: &[u8; 4] = b"HSM1";

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, msg: msg.into() }
}

fn header(bytes: &[u8], magic: &[u8; 4], dims: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file ends inside the magic"));
    }
    if &bytes[..4] != magic {
        return Err(format_err(0, format!("bad magic, expected {:?}", std::str::from_utf8(magic).unwrap_or("?"))));
    }
    (0..dims)
        .map(|i| {
            let off = 4 + 4 * i;
            let raw = bytes.get(off..off + 4).ok_or_else(|| format_err(bytes.len(), "truncated header"))?;
            let v = u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize;
            if v == 0 {
                return Err(format_err(off, "zero extent"));
            }
            Ok(v)
        })
        .collect()
}

fn payload<'a>(bytes: &'a [u8], start: usize, dims: &[usize], elem: usize) -> Result<&'a [u8]> {
    let len = dims
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(start - 4 * dims.len(), format!("extents {dims:?} overflow")))?;
    let have = bytes.len() - start;
    if have < len {
        return Err(format_err(bytes.len(), format!("truncated payload: {have} of {len} bytes")));
    }
    if have > len {
        return Err(format_err(start + len, format!("{} trailing bytes", have - len)));
    }
    Ok(&bytes[start..])
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * cube.data().len());
    out.extend_from_slice(CUBE_MAGIC);
    for d in [cube.width(), cube.height(), cube.bands()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in cube.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    let dims = header(bytes, CUBE_MAGIC, 3)?;
    let body = payload(bytes, 16, &dims, 4)?;
    let mut data = Vec::with_capacity(body.len() / 4);
    for (i, c) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format_err(16 + 4 * i, "non-finite value"));
        }
        data.push(v);
    }
    HsiCube::new(dims[0], dims[1], dims[2], data)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mask.data().len());
    out.extend_from_slice(MASK_MAGIC);
    for d in [mask.width(), mask.height()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(mask.data());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let dims = header(bytes, MASK_MAGIC, 2)?;
    let body = payload(bytes, 12, &dims, 1)?;
    if let Some(i) = body.iter().position(|&v| v > 1) {
        return Err(format_err(12 + i, format!("mask byte {} is not 0 or 1", body[i])));
    }
    Mask::new(dims[0], dims[1], body.to_vec())
}

pub fn write_cube(path: impl AsRef<Path>, cube: &HsiCube) -> Result<()> {
    Ok(std::fs::write(path, encode_cube(cube))?)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode_cube(&std::fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    Ok(std::fs::write(path, encode_mask(mask))?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask(&std::fs::read(path)?)
}
