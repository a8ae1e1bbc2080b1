//! IDX files as used by MNIST: big-endian magic `0x0000_08_NN` where `NN` is
//! the rank, then `NN` big-endian u32 extents, then raw unsigned bytes.

use std::path::Path;

use super::{read_maybe_gz, Dataset};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset: at as u64,
            message: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let have = bytes.len() - header;
    if have != len {
        return Err(Error::Format {
            offset: (header + have.min(len)) as u64,
            message: format!("payload holds {have} bytes, header promises {len}"),
        });
    }
    Ok(&bytes[header..])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, n * rows * cols)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, n)?.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), images.rows, images.cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an MNIST-style image/label pair (optionally gzipped) with pixels
/// scaled to `[0, 1]` and shape `1×rows×cols`.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    if labels.len() != images.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", images.len(), labels.len()),
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    Dataset::new(
        "mnist",
        vec![1, images.rows, images.cols],
        images.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
        labels.iter().map(|&l| usize::from(l)).collect(),
        classes,
    )
}

/// Recovers the raw pixel bytes of an unnormalized `[0, 1]`-scaled dataset.
pub(crate) fn to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<u8>, Vec<u8>) {
        let imgs = IdxImages {
            rows: 2,
            cols: 3,
            pixels: (0..18).map(|i| (i * 14) as u8).collect(),
        };
        (write_idx_images(&imgs), write_idx_labels(&[3, 9, 0]))
    }

    #[test]
    fn round_trips_bytes() {
        let (i, l) = sample();
        assert_eq!(write_idx_images(&parse_idx_images(&i).unwrap()), i);
        assert_eq!(write_idx_labels(&parse_idx_labels(&l).unwrap()), l);
        assert_eq!(&i[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx_images(&i).unwrap().len(), 3);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let (i, l) = sample();
        assert!(matches!(parse_idx_images(&l), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            parse_idx_images(&i[..i.len() - 1]),
            Err(Error::Format { offset: 33, .. })
        ));
        assert!(parse_idx_labels(&l[..6]).is_err());
    }

    #[test]
    fn pixel_scaling_inverts() {
        let bytes: Vec<u8> = (0..=255).collect();
        let scaled: Vec<f32> = bytes.iter().map(|&p| f32::from(p) / 255.0).collect();
        assert_eq!(to_bytes(&scaled), bytes);
    }
}
