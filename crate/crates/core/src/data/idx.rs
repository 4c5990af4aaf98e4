//! Reader for the big-endian IDX format used by the MNIST distribution.
//!
//! Image files start with magic `0x00000803` followed by the item count,
//! row count and column count (all `u32` big-endian), then one unsigned
//! byte per pixel. Label files start with magic `0x00000801` and the item
//! count, then one byte per label. Pixels are scaled to `[0, 1]` and each
//! image is flattened row-major.

use std::path::Path;

use ndarray::Array2;

use crate::error::{IdxError, Result};
use crate::types::LabeledDataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            file,
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file into an `n x (rows * cols)` matrix in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>, IdxError> {
    let magic = read_u32(bytes, 0, "image")?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            file: "image",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, "image")? as usize;
    let rows = read_u32(bytes, 8, "image")? as usize;
    let cols = read_u32(bytes, 12, "image")? as usize;
    let d = rows * cols;
    let expected = 16 + n * d;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            file: "image",
            expected,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Array2::from_shape_vec((n, d), pixels).expect("shape checked above"))
}

/// Parses an IDX label file, rejecting labels `>= num_classes`.
pub fn parse_idx_labels(bytes: &[u8], num_classes: usize) -> Result<Vec<usize>, IdxError> {
    let magic = read_u32(bytes, 0, "label")?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            file: "label",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, "label")? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            file: "label",
            expected,
            found: bytes.len(),
        });
    }
    bytes[8..expected]
        .iter()
        .enumerate()
        .map(|(index, &label)| {
            if (label as usize) < num_classes {
                Ok(label as usize)
            } else {
                Err(IdxError::LabelOutOfRange {
                    index,
                    label,
                    classes: num_classes,
                })
            }
        })
        .collect()
}

/// Combines parsed image and label buffers into a dataset.
pub fn idx_dataset(image_bytes: &[u8], label_bytes: &[u8], num_classes: usize) -> Result<LabeledDataset> {
    let features = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes, num_classes)?;
    if features.nrows() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: features.nrows(),
            labels: labels.len(),
        }
        .into());
    }
    LabeledDataset::new(features, labels, num_classes)
}

/// Loads a 10-class IDX image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_idx_with_classes(images_path, labels_path, MNIST_CLASSES)
}

pub fn load_idx_with_classes(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    idx_dataset(&images, &labels, num_classes)
}

/// Serializes images (values in `[0, 1]`) back to IDX bytes.
pub fn encode_idx_images(features: &Array2<f64>, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(features.ncols(), rows * cols, "image shape mismatch");
    let mut out = Vec::with_capacity(16 + features.len());
    for word in [IMAGE_MAGIC, features.nrows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(features.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&y| y as u8));
    out
}
