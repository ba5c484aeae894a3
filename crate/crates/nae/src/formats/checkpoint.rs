//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field        | encoding                                         |
//! |--------------|--------------------------------------------------|
//! | magic        | `NAEW`                                           |
//! | version      | `u32`                                            |
//! | digest       | `u64`, leading 8 bytes of SHA-256 of the config  |
//! | config       | `u32` kernel, `u32` skip, `u32` n, `n` x `u32` widths |
//! | param count  | `u32`                                            |
//! | per param    | `u32` name length, name, `u32` rank, rank x `u32` dims, `f32` payload |

use std::path::Path;

use nae_core::nn::{ModelConfig, ModelParams, Param};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_file, ParseError, Result};

pub const MAGIC: &[u8; 4] = b"NAEW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

fn config_block(config: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(config.kernel as u32).to_le_bytes());
    out.extend_from_slice(&u32::from(config.skip).to_le_bytes());
    out.extend_from_slice(&(config.widths.len() as u32).to_le_bytes());
    for &w in &config.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out
}

/// Identifies a model layout; stored so mismatched checkpoints are caught
/// before any weights are interpreted.
pub fn config_digest(config: &ModelConfig) -> u64 {
    let hash = Sha256::digest(config_block(config));
    u64::from_le_bytes(hash[..8].try_into().unwrap())
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * ckpt.params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_digest(&ckpt.config).to_le_bytes());
    out.extend_from_slice(&config_block(&ckpt.config));
    out.extend_from_slice(&(ckpt.params.params.len() as u32).to_le_bytes());
    for p in &ckpt.params.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.dims.len() as u32).to_le_bytes());
        for &d in &p.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ParseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ParseError::new(
                1,
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ParseError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, ParseError> {
    let err = |msg: String| ParseError::new(1, msg);
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(err("bad magic, expected NAEW".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let digest = c.u64("digest")?;
    let kernel = c.u32("kernel size")? as usize;
    let skip = match c.u32("skip flag")? {
        0 => false,
        1 => true,
        v => return Err(err(format!("skip flag must be 0 or 1, got {v}"))),
    };
    let n_widths = c.u32("stage count")? as usize;
    if n_widths > 16 {
        return Err(err(format!("implausible stage count {n_widths}")));
    }
    let widths = (0..n_widths)
        .map(|_| c.u32("stage width").map(|w| w as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let config = ModelConfig {
        widths,
        kernel,
        skip,
    };
    config.validate().map_err(|e| err(e.to_string()))?;
    if digest != config_digest(&config) {
        return Err(err("config digest does not match the stored config".into()));
    }

    let n_params = c.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(n_params.min(256));
    for _ in 0..n_params {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "parameter name")?)
            .map_err(|_| err("parameter name is not UTF-8".into()))?
            .to_owned();
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(err(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| c.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| err(format!("{name}: shape {dims:?} overflows")))?;
        let data = c
            .take(count, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.push(Param { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(err(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let params = ModelParams { params };
    params.check(&config).map_err(|e| err(e.to_string()))?;
    Ok(Checkpoint { config, params })
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    decode(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &encode(ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nae_core::rng::{substream, Purpose};

    fn small() -> Checkpoint {
        let config = ModelConfig {
            widths: vec![4, 8],
            kernel: 3,
            skip: true,
        };
        let params = ModelParams::init(&config, &mut substream(1, Purpose::Init, &[])).unwrap();
        Checkpoint { config, params }
    }

    #[test]
    fn round_trip() {
        let ck = small();
        assert_eq!(decode(&encode(&ck)).unwrap(), ck);
    }

    #[test]
    fn digest_depends_on_layout() {
        let a = ModelConfig::default();
        let b = ModelConfig {
            skip: false,
            ..ModelConfig::default()
        };
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&small());
        assert!(decode(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[8] ^= 1;
        assert!(decode(&bad).unwrap_err().message.contains("digest"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        assert!(decode(b"NAEF").is_err());
    }
}
