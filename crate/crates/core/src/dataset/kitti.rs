//! SemanticKITTI scan and label files.
//!
//! A scan is a packed array of little-endian `f32` quadruples
//! `(x, y, z, intensity)`; the matching label file holds one little-endian
//! `u32` per point whose low 16 bits are the semantic id.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KittiScan {
    /// `(x, y, z, intensity)` records.
    pub points: Vec<[f32; 4]>,
    /// Raw semantic ids, present when a label file was given.
    pub labels: Option<Vec<u16>>,
}

impl KittiScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn parse_scan_bytes(bytes: &[u8], path: &Path) -> Result<Vec<[f32; 4]>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::format(
            path,
            format!("size {} is not a multiple of 16 bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|r| std::array::from_fn(|k| f32::from_le_bytes(r[4 * k..4 * k + 4].try_into().unwrap())))
        .collect())
}

pub fn parse_label_bytes(bytes: &[u8], path: &Path) -> Result<Vec<u16>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::format(
            path,
            format!("size {} is not a multiple of 4 bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|w| (u32::from_le_bytes(w.try_into().unwrap()) & 0xffff) as u16)
        .collect())
}

pub fn read_kitti_scan(scan: &Path, labels: Option<&Path>) -> Result<KittiScan> {
    let bytes = std::fs::read(scan).map_err(|e| Error::io(scan, e))?;
    let points = parse_scan_bytes(&bytes, scan)?;
    let labels = match labels {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let labels = parse_label_bytes(&bytes, path)?;
            if labels.len() != points.len() {
                return Err(Error::format(
                    path,
                    format!("{} labels for {} points", labels.len(), points.len()),
                ));
            }
            Some(labels)
        }
        None => None,
    };
    Ok(KittiScan { points, labels })
}

/// Raw SemanticKITTI id to 0-based training class, `None` for ignored ids.
/// Moving-object ids fold into their static classes.
pub fn kitti_learning_map(raw: u16) -> Option<usize> {
    let train = match raw {
        10 | 252 => 1,
        11 => 2,
        15 => 3,
        18 | 258 => 4,
        13 | 16 | 20 | 256 | 257 | 259 => 5,
        30 | 254 => 6,
        31 | 253 => 7,
        32 | 255 => 8,
        40 | 60 => 9,
        44 => 10,
        48 => 11,
        49 => 12,
        50 => 13,
        51 => 14,
        70 => 15,
        71 => 16,
        72 => 17,
        80 => 18,
        81 => 19,
        _ => return None,
    };
    Some(train - 1)
}
