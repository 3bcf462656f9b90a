//! IDX containers (the MNIST family format).
//!
//! Images use magic `0x00000803` with big-endian `N, H, W` dims, or
//! `0x00000804` with `N, C, H, W`. Labels use `0x00000801` with `N`.
//! Pixels are unsigned bytes mapped to `[0, 1]`.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IMAGES_MAGIC_CHW: u32 = 0x0000_0804;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;
    parse_idx(&img, &lab)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (images, shape) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != shape[0] {
        return Err(Error::IdxCountMismatch { images: shape[0], labels: labels.len() });
    }
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(Tensor::new(shape.to_vec(), images)?, labels, num_classes)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated(format!("{what} header")))
}

fn parse_images(bytes: &[u8]) -> Result<(Vec<f32>, [usize; 4])> {
    let magic = be_u32(bytes, 0, "images")?;
    let rank = match magic {
        IMAGES_MAGIC => 3,
        IMAGES_MAGIC_CHW => 4,
        found => return Err(Error::IdxMagic { found, expected: IMAGES_MAGIC }),
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, "images").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape = if rank == 3 { [dims[0], 1, dims[1], dims[2]] } else { [dims[0], dims[1], dims[2], dims[3]] };
    let n: usize = shape.iter().product();
    let start = 4 + 4 * rank;
    let payload = bytes
        .get(start..start + n)
        .ok_or_else(|| Error::IdxTruncated(format!("images: need {n} pixel bytes, have {}", bytes.len() - start)))?;
    Ok((payload.iter().map(|&p| p as f32 / 255.0).collect(), shape))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxMagic { found: magic, expected: LABELS_MAGIC });
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::IdxTruncated(format!("labels: need {n} bytes, have {}", bytes.len() - 8)))?;
    Ok(payload.iter().map(|&l| l as usize).collect())
}

/// Encodes a dataset as an (images, labels) IDX pair.
///
/// Pixels are clamped to `[0, 1]` and rounded to the nearest byte; single
/// channel datasets use the 3-dim image magic.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if dataset.num_classes() > 256 {
        return Err(Error::Config(format!("{} classes do not fit a byte label", dataset.num_classes())));
    }
    let [c, h, w] = dataset.sample_shape();
    let n = dataset.len();
    let mut img = Vec::with_capacity(20 + dataset.images().len());
    if c == 1 {
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [n, h, w] {
            img.extend_from_slice(&(d as u32).to_be_bytes());
        }
    } else {
        img.extend_from_slice(&IMAGES_MAGIC_CHW.to_be_bytes());
        for d in [n, c, h, w] {
            img.extend_from_slice(&(d as u32).to_be_bytes());
        }
    }
    img.extend(dataset.images().data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((img, lab))
}

pub fn write_idx(dataset: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (img, lab) = encode_idx(dataset)?;
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}
