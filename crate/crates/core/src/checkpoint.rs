//! Binary parameter files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic[8] version:u32 class_count:u32 hidden:u32 extra:u32 count:u64 f32[count]
//! ```
//!
//! `extra` is the step embedding width for denoisers and the offsets per
//! point for refiners.

use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 * 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub magic: [u8; 8],
    pub class_count: u32,
    pub hidden: u32,
    pub extra: u32,
}

pub fn encode(header: &CheckpointHeader, params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(&header.magic);
    for v in [CHECKPOINT_VERSION, header.class_count, header.hidden, header.extra] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], magic: [u8; 8]) -> std::result::Result<(CheckpointHeader, Vec<f64>), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if bytes[..8] != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(&magic)
        ));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap());
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        ));
    }
    let header = CheckpointHeader {
        magic,
        class_count: word(1),
        hidden: word(2),
        extra: word(3),
    };
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count.saturating_mul(4) {
        return Err(format!(
            "expected {count} parameters, found {} bytes of payload",
            body.len()
        ));
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((header, params))
}

pub(crate) fn write(path: &Path, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    std::fs::write(path, encode(header, params)).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path, magic: [u8; 8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic).map_err(|m| Error::format(path, m))
}
