// SPDX-License-Identifier: Apache-2.0

//! Raw deformation-map files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0..8    magic b"VMDEFMAP"
//! 8..12   width  (u32)
//! 12..16  height (u32)
//! 16..    dx plane, then dy plane; width*height f32 each, row-major
//! ```

use std::fs;
use std::path::Path;

use super::DeformationMap;
use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 8] = b"VMDEFMAP";

/// Writes the map; values are narrowed to `f32`.
pub fn save_map(m: &DeformationMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 8 * m.len());
    buf.extend_from_slice(MAP_MAGIC);
    buf.extend_from_slice(&(m.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.height() as u32).to_le_bytes());
    for v in m.dx().iter().chain(m.dy()) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<DeformationMap> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..8] != MAP_MAGIC {
        return Err(Error::format("deformation map", "bad magic"));
    }
    let word = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(8), word(12));
    let n = w * h;
    if buf.len() != 16 + 8 * n {
        return Err(Error::format(
            "deformation map",
            format!("expected {} bytes for {w}x{h}, found {}", 16 + 8 * n, buf.len()),
        ));
    }
    let plane = |k: usize| -> Vec<f64> {
        buf[16 + 4 * n * k..16 + 4 * n * (k + 1)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    DeformationMap::new(w, h, plane(0), plane(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = DeformationMap::from_fn(5, 3, |x, y| (x as f64 * 0.25, -(y as f64) * 0.5)).unwrap();
        save_map(&m, &path).unwrap();
        assert_eq!(load_map(&path).unwrap(), m);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * 15);
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_map(&path), Err(Error::Format { .. })));
        fs::write(&path, b"NOTAMAP!\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_map(&path), Err(Error::Format { .. })));
    }
}
