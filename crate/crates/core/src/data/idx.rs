use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Real;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file into `(count, rows, cols, pixels / 255)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<Real>)> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let want = n * rows * cols;
    if body.len() < want {
        return Err(Error::Format(format!(
            "image file truncated: {} of {want} pixel bytes",
            body.len()
        )));
    }
    if body.len() > want {
        return Err(Error::Format(format!(
            "image file has {} trailing bytes",
            body.len() - want
        )));
    }
    Ok((
        n,
        rows,
        cols,
        body.iter().map(|&p| p as Real / 255.0).collect(),
    ))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u16>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!(
            "label file holds {} bytes for {n} labels",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| b as u16).collect())
}

/// Loads an image/label IDX pair; the class count is `max label + 1`
/// (at least 10).
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(&fs::read(images)?)?;
    let labels = read_idx_labels(&fs::read(labels)?)?;
    if labels.len() != n {
        return Err(Error::Format(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let classes = labels
        .iter()
        .map(|&y| y as usize + 1)
        .max()
        .unwrap_or(0)
        .max(10);
    Dataset::new([1, rows, cols], pixels, labels, classes)
}

/// Serializes single-channel images (values in [0, 1], rounded to 8 bits)
/// as an IDX file.
pub fn write_idx_images(data: &Dataset) -> Result<Vec<u8>> {
    let [channels, rows, cols] = data.shape();
    if channels != 1 {
        return Err(Error::invalid(format!(
            "IDX images hold one channel, got {channels}"
        )));
    }
    let mut out = Vec::with_capacity(16 + data.pixels().len());
    for v in [IMAGE_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(
        data.pixels()
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Serializes labels as an IDX file; labels above 255 are an error.
pub fn write_idx_labels(labels: &[u16]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        out.push(
            u8::try_from(y)
                .map_err(|_| Error::invalid(format!("label {y} does not fit in a byte")))?,
        );
    }
    Ok(out)
}
