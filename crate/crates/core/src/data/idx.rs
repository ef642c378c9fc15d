//! MNIST IDX files: big-endian u32 header fields followed by raw u8 data.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn header(bytes: &[u8], path: &Path, fields: usize) -> Result<Vec<u32>, DataError> {
    if bytes.len() < 4 * fields {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: 4 * fields,
            found: bytes.len(),
        });
    }
    Ok(bytes[..4 * fields]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(found: u32, expected: u32) -> Result<(), DataError> {
    if found != expected {
        return Err(DataError::Format { found, expected });
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], path: &Path, offset: usize, len: usize) -> Result<&'a [u8], DataError> {
    if bytes.len() < offset + len {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: offset + len,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..offset + len])
}

/// Loads an image/label IDX pair, scaling pixels by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;

    let ih = header(&image_bytes, images_path, 1)?;
    check_magic(ih[0], IMAGE_MAGIC)?;
    let ih = header(&image_bytes, images_path, 4)?;
    let (n, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);

    let lh = header(&label_bytes, labels_path, 1)?;
    check_magic(lh[0], LABEL_MAGIC)?;
    let lh = header(&label_bytes, labels_path, 2)?;
    let n_labels = lh[1] as usize;
    if n != n_labels {
        return Err(DataError::Consistency {
            images: n,
            labels: n_labels,
        });
    }

    let dim = rows * cols;
    let pixels = body(&image_bytes, images_path, 16, n * dim)?;
    let labels = body(&label_bytes, labels_path, 8, n)?.to_vec();
    let images = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(images, labels, dim)
}

/// Writes `dataset` as an IDX pair. Pixels are quantized to `round(x * 255)`,
/// so a dataset loaded by [`load_idx`] round-trips exactly. The image side
/// length is taken as `sqrt(dim)` when `dim` is a perfect square, otherwise
/// images are written as `1 × dim`.
pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let dim = dataset.dim();
    let side = (dim as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == dim { (side, side) } else { (1, dim) };

    let mut img = Vec::with_capacity(16 + dataset.images().len());
    for field in [IMAGE_MAGIC, dataset.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&field.to_be_bytes());
    }
    img.extend(dataset.images().iter().map(|&p| (p * 255.0).round() as u8));

    let mut lab = Vec::with_capacity(8 + dataset.len());
    for field in [LABEL_MAGIC, dataset.len() as u32] {
        lab.extend_from_slice(&field.to_be_bytes());
    }
    lab.extend_from_slice(dataset.labels());

    let write = |path: &Path, bytes: &[u8]| {
        fs::write(path, bytes).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    write(images_path.as_ref(), &img)?;
    write(labels_path.as_ref(), &lab)
}
