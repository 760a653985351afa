//! IDX image/label files (the MNIST container format).

use std::path::Path;

use super::{BinarizationSpec, BinaryDataset, RawDataset};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, one `rows * cols` buffer per image.
    pub images: Vec<Vec<u8>>,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 0,
            message: format!("truncated IDX header at byte {offset}"),
        })
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * size {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            message: format!(
                "expected {} pixel bytes for {count} images of {rows}x{cols}, found {}",
                count * size,
                body.len()
            ),
        });
    }
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        body.chunks_exact(size).map(<[u8]>::to_vec).collect()
    };
    Ok(IdxImages { rows, cols, images })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            message: format!("expected {count} labels, found {}", body.len()),
        });
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair as raw pixel intensities. Returns the
/// dataset and the image shape.
pub fn load_idx_raw(images_path: &Path, labels_path: &Path) -> Result<(RawDataset, (usize, usize))> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.images.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "IDX label count",
            expected: images.images.len(),
            actual: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let class_count = usize::from(*labels.iter().max().unwrap()) + 1;
    let (rows, cols) = (images.rows, images.cols);
    let feature_names = (0..rows * cols)
        .map(|i| format!("px_{}_{}", i / cols, i % cols))
        .collect();
    let raw = RawDataset::new(
        images
            .images
            .into_iter()
            .map(|img| img.into_iter().map(f64::from).collect())
            .collect(),
        labels.into_iter().map(usize::from).collect(),
        feature_names,
        (0..class_count).map(|c| c.to_string()).collect(),
    )?;
    Ok((raw, (rows, cols)))
}

/// Loads IDX images binarized at `pixel_threshold`: a pixel becomes 1 when its
/// value is at least the threshold.
pub fn load_idx(images_path: &Path, labels_path: &Path, pixel_threshold: u8) -> Result<BinaryDataset> {
    let (raw, (rows, cols)) = load_idx_raw(images_path, labels_path)?;
    BinarizationSpec::pixels(rows, cols, pixel_threshold).apply_dataset(&raw)
}
