//! Detector-shaped 2-D maps: real-valued images and binary masks.
//!
//! Row-major, `data[row * width + col]`; rows run along the rotation axis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn save_f32(&self, path: &Path) -> Result<()> {
        io::write_f32_le(path, self.data.iter().map(|&v| v as f32))
    }

    pub fn load_f32(path: &Path, width: usize, height: usize) -> Result<Image> {
        let data = io::read_f32_le(path, width * height)?;
        Image::new(width, height, data.into_iter().map(f64::from).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// One byte per pixel, 0 or 1.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| b as u8).collect();
        io::write_bytes(path, &bytes)
    }

    pub fn load(path: &Path, width: usize, height: usize) -> Result<Mask> {
        let bytes = io::read_bytes(path, width * height)?;
        if let Some(bad) = bytes.iter().find(|&&b| b > 1) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: format!("mask byte {bad} is not 0 or 1"),
            });
        }
        Mask::new(width, height, bytes.into_iter().map(|b| b == 1).collect())
    }
}

/// JSON sidecar for a standalone raw mask or image file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Image::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Mask::new(2, 2, vec![true; 4]).is_ok());
    }

    #[test]
    fn mask_bytes_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::new(3, 2, vec![true, false, false, true, true, false]).unwrap();
        let p = dir.path().join("m.raw");
        m.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), vec![1, 0, 0, 1, 1, 0]);
        assert_eq!(Mask::load(&p, 3, 2).unwrap(), m);
        assert!(Mask::load(&p, 2, 2).is_err());
    }
}
