//! Binary location-field files.
//!
//! Layout (little-endian): magic `LF3D`, `u32` version (1), `u32` height,
//! `u32` width, `height * width * 3` `f32` values (row-major, X/Y/Z
//! interleaved), then `height * width` mask bytes (0 or 1).

use std::fs;
use std::path::Path;

use finepose_core::LocationField;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"LF3D";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a location field file")]
    BadMagic,
    #[error("unsupported field file version {0}")]
    UnsupportedVersion(u32),
    #[error("payload has {actual} bytes, header requires {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("mask byte {value} at pixel {index} is not 0 or 1")]
    BadMask { index: usize, value: u8 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    /// Short machine-readable name used in prediction files.
    pub fn tag(&self) -> &'static str {
        match self {
            FormatError::BadMagic => "BadMagic",
            FormatError::UnsupportedVersion(_) => "UnsupportedVersion",
            FormatError::TruncatedPayload { .. } => "TruncatedPayload",
            FormatError::BadMask { .. } => "BadMask",
            FormatError::Io(_) => "Io",
        }
    }
}

pub fn write_field(field: &LocationField) -> Vec<u8> {
    let n = field.width() * field.height();
    let mut out = Vec::with_capacity(HEADER_LEN + 13 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    for c in field.coords() {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend(field.mask().iter().map(|&m| m as u8));
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_field(bytes: &[u8]) -> Result<LocationField, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::TruncatedPayload { expected: HEADER_LEN, actual: bytes.len() });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let height = read_u32(bytes, 8) as usize;
    let width = read_u32(bytes, 12) as usize;
    let n = width.checked_mul(height).ok_or(FormatError::TruncatedPayload {
        expected: usize::MAX,
        actual: bytes.len(),
    })?;
    let expected = n
        .checked_mul(13)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or(FormatError::TruncatedPayload { expected: usize::MAX, actual: bytes.len() })?;
    if bytes.len() < expected {
        return Err(FormatError::TruncatedPayload { expected, actual: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..];
    let coords: Vec<[f32; 3]> = payload[..12 * n]
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect();
    let mut mask = Vec::with_capacity(n);
    for (index, &value) in payload[12 * n..13 * n].iter().enumerate() {
        match value {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => return Err(FormatError::BadMask { index, value }),
        }
    }
    Ok(LocationField::from_parts(width, height, coords, mask).expect("sizes checked above"))
}

pub fn save_field(path: &Path, field: &LocationField) -> Result<(), FormatError> {
    fs::write(path, write_field(field))?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<LocationField, FormatError> {
    read_field(&fs::read(path)?)
}
