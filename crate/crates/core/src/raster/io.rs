// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use image::{DynamicImage, GrayImage};

use super::{BinaryRaster, Raster};
use crate::error::{Error, Result};

/// Quantizes a `[0, 1]` value to a byte, rounding halves up (0.5 -> 128).
pub fn to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Loads an 8-bit single-channel PNG, mapping byte `v` to `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                detail: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let pixels = gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Raster::new(w as usize, h as usize, pixels)
}

/// Writes an 8-bit grayscale PNG.
pub fn save_image(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let bytes = r.pixels().iter().map(|&p| to_byte(p)).collect();
    write_gray(r.width(), r.height(), bytes, path.as_ref())
}

pub fn save_binary(r: &BinaryRaster, path: impl AsRef<Path>) -> Result<()> {
    let bytes = r.pixels().iter().map(|&p| p * 255).collect();
    write_gray(r.width(), r.height(), bytes, path.as_ref())
}

/// Loads a PNG that must contain only bytes 0 and 255.
pub fn load_binary(path: impl AsRef<Path>) -> Result<BinaryRaster> {
    let path = path.as_ref();
    let r = load_image(path)?;
    BinaryRaster::from_raster(&r).map_err(|e| Error::UnsupportedImage {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn write_gray(width: usize, height: usize, bytes: Vec<u8>, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes).expect("buffer length matches raster dimensions");
    img.save(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}
