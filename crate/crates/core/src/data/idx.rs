use std::fs;
use std::path::Path;

use super::{DataError, ImageDataset};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// MNIST file-name prefixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated { expected: at + 4, found: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], DataError> {
    if bytes.len() < offset + len {
        return Err(DataError::Truncated { expected: offset + len, found: bytes.len() });
    }
    Ok(&bytes[offset..offset + len])
}

/// Parses an unsigned-byte image file into `(n, rows, cols, pixels / 255)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<f64>), DataError> {
    let bytes = read(path)?;
    check_magic(&bytes, IMAGE_MAGIC)?;
    let n = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    let raw = payload(&bytes, 16, n * rows * cols)?;
    Ok((n, rows, cols, raw.iter().map(|&b| f64::from(b) / 255.0).collect()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let bytes = read(path)?;
    check_magic(&bytes, LABEL_MAGIC)?;
    let n = be_u32(&bytes, 4)? as usize;
    Ok(payload(&bytes, 8, n)?.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image file and its label file as a `(n, 1, rows, cols)` dataset.
pub fn load_idx(images: &Path, labels: &Path) -> Result<ImageDataset, DataError> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch { images: n, labels: labels.len() });
    }
    let split = images.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ImageDataset::new(1, rows, cols, pixels, Some(labels), split)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<ImageDataset, DataError> {
    let p = split.prefix();
    let mut ds = load_idx(&dir.join(format!("{p}-images-idx3-ubyte")), &dir.join(format!("{p}-labels-idx1-ubyte")))?;
    ds.split = p.to_string();
    Ok(ds)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Writes single-channel images as an unsigned-byte IDX file, rounding `v · 255`.
pub fn write_idx_images(path: &Path, ds: &ImageDataset) -> Result<(), DataError> {
    if ds.channels() != 1 {
        return Err(DataError::Invalid(format!("IDX images are single-channel, got {}", ds.channels())));
    }
    let mut bytes = Vec::with_capacity(16 + ds.pixels().len());
    for v in [IMAGE_MAGIC, ds.len() as u32, ds.height() as u32, ds.width() as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(ds.pixels().iter().map(|v| (v * 255.0).round() as u8));
    write(path, &bytes)
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        bytes.push(u8::try_from(l).map_err(|_| DataError::LabelTooLarge(l))?);
    }
    write(path, &bytes)
}
