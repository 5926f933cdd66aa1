//! IDX binary files: big-endian u32 magic and dimensions, u8 payload.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{PanError, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_err(offset: usize, reason: impl Into<String>) -> PanError {
    PanError::Parse {
        offset,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| parse_err(offset, format!("truncated header: missing {what}")))
}

/// Reads header fields after checking the magic; returns dims and payload.
fn parse(bytes: &[u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &[u8])> {
    let got = be_u32(bytes, 0, "magic")?;
    if got != magic {
        return Err(parse_err(
            0,
            format!("bad magic 0x{got:08x}, expected 0x{magic:08x}"),
        ));
    }
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, "dimension").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let need: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!(
                "truncated payload: {} of {need} bytes present",
                payload.len()
            ),
        ));
    }
    if payload.len() > need {
        return Err(parse_err(
            header + need,
            format!("{} trailing bytes", payload.len() - need),
        ));
    }
    Ok((dims, payload))
}

/// Images scaled to [0,1], shape `[N, 1, rows, cols]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let (dims, payload) = parse(bytes, IMAGES_MAGIC, 3)?;
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, payload) = parse(bytes, LABELS_MAGIC, 1)?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    parse_idx_images(&fs::read(path)?)
}

/// Loads an image file and its label file into a dataset (all train).
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = read_idx_images(images)?;
    let y = parse_idx_labels(&fs::read(labels)?)?;
    if y.len() != x.batch() {
        return Err(parse_err(
            4,
            format!(
                "label count {} does not match image count {}",
                y.len(),
                x.batch()
            ),
        ));
    }
    Dataset::new(x, y, None)
}

/// Writes `[N, 1, rows, cols]` images, quantizing [0,1] to bytes.
pub fn write_idx_images(path: &Path, images: &Tensor) -> Result<()> {
    let &[n, 1, rows, cols] = images.shape() else {
        return Err(PanError::Shape(format!(
            "IDX images need [N,1,H,W], got {:?}",
            images.shape()
        )));
    };
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(
        images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(
            u8::try_from(l)
                .map_err(|_| PanError::Index(format!("label {l} does not fit a byte")))?,
        );
    }
    fs::write(path, out)?;
    Ok(())
}
