//! Vector field files: a 16-byte header (`NAEF`, then version, width and
//! height as little-endian `u32`) followed by the `dx` plane and the `dy`
//! plane, each row-major little-endian `f32`.

use std::path::Path;

use nae_core::VectorField;

use crate::error::{read_file, write_file, ParseError, Result};

pub const MAGIC: &[u8; 4] = b"NAEF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(field: &VectorField) -> Vec<u8> {
    let n = field.width() * field.height();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    for v in field.dx().iter().chain(field.dy()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Binary files carry no lines; errors are reported against line 1.
pub fn decode(bytes: &[u8]) -> Result<VectorField, ParseError> {
    let err = |msg: String| ParseError::new(1, msg);
    if bytes.len() < HEADER_LEN {
        return Err(err(format!(
            "header truncated: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(err("bad magic, expected NAEF".into()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(err(format!("unsupported field version {version}")));
    }
    let (w, h) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let n = w
        .checked_mul(h)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| err(format!("field size {w}x{h} overflows")))?;
    let expected = HEADER_LEN + 8 * n;
    if bytes.len() != expected {
        return Err(err(format!(
            "length mismatch: {w}x{h} field needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let dx: Vec<f32> = values.by_ref().take(n).collect();
    let dy: Vec<f32> = values.collect();
    VectorField::new(w, h, dx, dy).map_err(|e| err(e.to_string()))
}

pub fn read(path: &Path) -> Result<VectorField> {
    decode(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, field: &VectorField) -> Result<()> {
    write_file(path, &encode(field))
}
