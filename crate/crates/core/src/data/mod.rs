//! Image datasets, IDX files, synthetic blobs and input corruptions.

mod corrupt;
mod idx;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::diffcore::Tensor;

pub use corrupt::{corrupt, flip_horizontal, rotate_bilinear, Corruption};
pub use idx::{load_idx, load_mnist, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, Split};
pub use synth::{synth_mixture, VectorDataset};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("label {0} does not fit in one byte")]
    LabelTooLarge(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// `N × C × H × W` images with values in `[0, 1]` and optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    labels: Option<Vec<usize>>,
    split: String,
}

impl ImageDataset {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        labels: Option<Vec<usize>>,
        split: impl Into<String>,
    ) -> Result<Self, DataError> {
        let per = channels * height * width;
        if per == 0 || pixels.len() % per != 0 {
            return Err(DataError::Invalid(format!(
                "{} values do not tile {channels}x{height}x{width} images",
                pixels.len()
            )));
        }
        if let Some(&bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::OutOfRange(bad));
        }
        let n = pixels.len() / per;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(DataError::CountMismatch { images: n, labels: l.len() });
            }
        }
        Ok(Self { channels, height, width, pixels, labels, split: split.into() })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.image_size()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Values per image, `C·H·W`.
    pub fn image_size(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let s = self.image_size();
        &self.pixels[i * s..(i + 1) * s]
    }

    /// Stacks the selected images into a `(b, C, H, W)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.image_size());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data).expect("batch shape matches")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect())
    }

    /// The first `n` images (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.image_size()].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            ..self.clone_meta()
        }
    }

    pub(crate) fn with_pixels(&self, pixels: Vec<f64>, split: String) -> Self {
        Self { pixels, labels: self.labels.clone(), split, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: Vec::new(),
            labels: None,
            split: self.split.clone(),
        }
    }
}
