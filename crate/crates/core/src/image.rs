//! RGB image tensors with unit-interval values, PNG I/O and image stores.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::data::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 8;

/// An `H×W×3` image stored row-major, channel-interleaved, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidImage(format!(
                "{height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidImage(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    /// Builds an image from a closure over `(row, col, channel)`; results are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..CHANNELS {
                    data.push(clamp_unit(f(r, c, ch)));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * CHANNELS + ch]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Quantizes to 8-bit RGB (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = ::image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(h as usize, w as usize, img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = ::image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.to_rgb8(),
        )
        .ok_or_else(|| Error::InvalidImage("buffer size mismatch".into()))?;
        buf.save_with_format(path, ::image::ImageFormat::Png)?;
        Ok(())
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Source of the image behind each manifest record.
pub trait ImageStore {
    fn load(&self, record: &SampleRecord) -> Result<ImageTensor>;
}

/// Images held in memory, keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageStore {
    images: HashMap<String, ImageTensor>,
}

impl MemoryImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, image: ImageTensor) {
        self.images.insert(id.into(), image);
    }

    pub fn get(&self, id: &str) -> Option<&ImageTensor> {
        self.images.get(id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads every record of `manifest` from `source` into memory.
    pub fn preload(manifest: &DatasetManifest, source: &dyn ImageStore) -> Result<Self> {
        let mut store = Self::new();
        for rec in manifest.records() {
            store.insert(rec.id.clone(), source.load(rec)?);
        }
        Ok(store)
    }
}

impl ImageStore for MemoryImageStore {
    fn load(&self, record: &SampleRecord) -> Result<ImageTensor> {
        self.images
            .get(&record.id)
            .cloned()
            .ok_or_else(|| Error::MissingImage(record.id.clone()))
    }
}

/// PNG files on disk; relative `image_path`s resolve against `root`.
#[derive(Debug, Clone)]
pub struct DirImageStore {
    root: PathBuf,
}

impl DirImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Store rooted at the directory containing `manifest_path`.
    pub fn for_manifest(manifest_path: &Path) -> Self {
        Self::new(
            manifest_path
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        )
    }
}

impl ImageStore for DirImageStore {
    fn load(&self, record: &SampleRecord) -> Result<ImageTensor> {
        let path = self.root.join(&record.image_path);
        if !path.is_file() {
            return Err(Error::MissingImage(record.id.clone()));
        }
        ImageTensor::load_png(&path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_and_out_of_range() {
        assert!(ImageTensor::filled(7, 8, 0.5).is_err());
        assert!(ImageTensor::filled(8, 8, 1.5).is_err());
        assert!(ImageTensor::filled(8, 8, f32::NAN).is_err());
        assert!(ImageTensor::new(8, 8, vec![0.0; 10]).is_err());
        assert!(ImageTensor::filled(8, 8, 1.0).is_ok());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let img = ImageTensor::from_fn(9, 12, |r, c, ch| ((r * 31 + c * 7 + ch * 3) % 256) as f32 / 255.0)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        let back = ImageTensor::load_png(&path).unwrap();
        assert_eq!(back, img);
    }
}
