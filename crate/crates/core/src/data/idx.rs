//! IDX image/label files (the MNIST container format). Big-endian headers,
//! u8 payload; pixels are scaled to [0, 1] on load and quantized back on
//! save, so load -> save reproduces the original bytes.

use std::path::Path;

use crate::data::LabeledDataset;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn read_u32(&mut self, what: &'static str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::IdxTruncated(what));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn read_payload(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::IdxTruncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<(Tensor, (usize, usize))> {
    let mut c = Cursor::new(bytes);
    let magic = c.read_u32("image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = c.read_u32("image count")? as usize;
    let rows = c.read_u32("image rows")? as usize;
    let cols = c.read_u32("image cols")? as usize;
    let payload = c.read_payload(n * rows * cols, "image payload")?;
    let data: Vec<f32> = payload.iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok((Tensor::new(vec![n, rows * cols], data)?, (rows, cols)))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor::new(bytes);
    let magic = c.read_u32("label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = c.read_u32("label count")? as usize;
    Ok(c.read_payload(n, "label payload")?.to_vec())
}

pub fn images_to_idx(images: &Tensor, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(images.row_dim(), rows * cols, "image geometry");
    let mut out = Vec::with_capacity(16 + images.as_slice().len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.n_rows() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend(
        images
            .as_slice()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn labels_to_idx(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Load a labeled dataset from an IDX image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (images, _) = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.n_rows() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.n_rows(),
            labels: labels.len(),
        });
    }
    LabeledDataset::new(
        images,
        labels,
        &format!("idx:{}", images_path.display()),
    )
}

/// Write a dataset back out as an IDX pair with the given image geometry.
pub fn save_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    if ds.dim() != rows * cols {
        return Err(Error::DimensionMismatch {
            what: "idx image geometry",
            expected: ds.dim(),
            actual: rows * cols,
        });
    }
    std::fs::write(images_path, images_to_idx(&ds.images, rows, cols))?;
    std::fs::write(labels_path, labels_to_idx(&ds.labels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_idx_pair() -> (Vec<u8>, Vec<u8>) {
        // Three 2x2 images with every distinct byte value region.
        let mut images = Vec::new();
        images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        images.extend_from_slice(&3u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 51, 102, 153, 204, 255, 1, 2, 3, 4, 5, 6]);
        let labels = labels_to_idx(&[7, 0, 9]);
        (images, labels)
    }

    #[test]
    fn parse_scales_to_unit_interval() {
        let (bytes, _) = sample_idx_pair();
        let (t, (r, c)) = parse_idx_images(&bytes).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.row(0)[0], 0.0);
        assert_eq!(t.row(1)[1], 1.0);
        assert!((t.row(0)[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn round_trip_reproduces_bytes() {
        let (images, labels) = sample_idx_pair();
        let (t, (r, c)) = parse_idx_images(&images).unwrap();
        let l = parse_idx_labels(&labels).unwrap();
        assert_eq!(images_to_idx(&t, r, c), images);
        assert_eq!(labels_to_idx(&l), labels);
    }

    #[test]
    fn every_byte_value_survives_round_trip() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&16u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend(0..=255u8);
        let (t, _) = parse_idx_images(&bytes).unwrap();
        assert_eq!(images_to_idx(&t, 4, 4), bytes);
    }

    #[test]
    fn wrong_magic_rejected() {
        let (mut images, labels) = sample_idx_pair();
        images[2] = 0xff;
        assert!(matches!(
            parse_idx_images(&images).unwrap_err(),
            Error::IdxBadMagic { .. }
        ));
        assert!(parse_idx_labels(&labels).is_ok());
        assert!(matches!(
            parse_idx_labels(&images).unwrap_err(),
            Error::IdxBadMagic { .. }
        ));
    }

    #[test]
    fn truncation_rejected() {
        let (images, _) = sample_idx_pair();
        assert!(matches!(
            parse_idx_images(&images[..images.len() - 1]).unwrap_err(),
            Error::IdxTruncated(_)
        ));
        assert!(matches!(
            parse_idx_images(&images[..10]).unwrap_err(),
            Error::IdxTruncated(_)
        ));
    }

    #[test]
    fn file_pair_load_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (images, _) = sample_idx_pair();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, &images).unwrap();
        std::fs::write(&lp, labels_to_idx(&[1, 2])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp).unwrap_err(),
            Error::CountMismatch { .. }
        ));
        std::fs::write(&lp, labels_to_idx(&[1, 2, 3])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.labels, vec![1, 2, 3]);
    }
}
