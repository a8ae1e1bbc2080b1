//! CIFAR-10 binary batches: fixed 3073-byte records of one label byte followed
//! by 1024 red, 1024 green and 1024 blue bytes, each plane row-major 32×32.

use std::path::Path;

use super::idx::to_bytes;
use super::{read_maybe_gz, Dataset, Normalization};
use crate::error::{Error, Result};

pub const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;
const PLANE: usize = 32 * 32;

/// Splits raw records into `(labels, pixels)`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % CIFAR10_RECORD) as u64,
            message: format!("{} bytes is not a whole number of {CIFAR10_RECORD}-byte records", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR10_RECORD - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: (i * CIFAR10_RECORD) as u64,
                message: format!("label byte {} is out of range", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn write_cifar10(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * CIFAR10_RECORD);
    for (l, p) in labels.iter().zip(pixels.chunks_exact(CIFAR10_RECORD - 1)) {
        out.push(*l);
        out.extend_from_slice(p);
    }
    out
}

fn channel_stats(pixels: &[u8]) -> Normalization {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    for img in pixels.chunks_exact(3 * PLANE) {
        for (c, plane) in img.chunks_exact(PLANE).enumerate() {
            for &p in plane {
                let v = f64::from(p) / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let count = (pixels.len() / 3).max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / count - m * m).max(1e-12).sqrt())
        .collect();
    Normalization { mean, std }
}

/// Loads and concatenates CIFAR-10 batch files (optionally gzipped).
///
/// Pixels are scaled to `[0, 1]` and normalized per channel, using
/// `normalization` when given (e.g. training statistics for the test split)
/// and the loaded data's own statistics otherwise.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P], normalization: Option<&Normalization>) -> Result<Dataset> {
    let (mut labels, mut pixels) = (Vec::new(), Vec::new());
    for p in paths {
        let (l, px) = parse_cifar10(&read_maybe_gz(p)?)?;
        labels.extend(l);
        pixels.extend(px);
    }
    let norm = normalization.cloned().unwrap_or_else(|| channel_stats(&pixels));
    let mut features = Vec::with_capacity(pixels.len());
    for img in pixels.chunks_exact(3 * PLANE) {
        for (c, plane) in img.chunks_exact(PLANE).enumerate() {
            let (m, s) = (norm.mean[c], norm.std[c]);
            features.extend(plane.iter().map(|&p| ((f64::from(p) / 255.0 - m) / s) as f32));
        }
    }
    let mut d = Dataset::new(
        "cifar10",
        vec![3, 32, 32],
        features,
        labels.into_iter().map(usize::from).collect(),
        10,
    )?;
    d.normalization = Some(norm);
    Ok(d)
}

/// Serializes a CIFAR-shaped dataset back to binary records, undoing its normalization.
pub fn dataset_to_cifar10(d: &Dataset) -> Result<Vec<u8>> {
    if d.example_shape != [3, 32, 32] || d.labels.iter().any(|&l| l > 9) {
        return Err(crate::error::invalid("dataset is not CIFAR-10 shaped"));
    }
    let raw: Vec<f32> = match &d.normalization {
        None => d.features.clone(),
        Some(n) => d
            .features
            .chunks_exact(PLANE)
            .enumerate()
            .flat_map(|(i, plane)| {
                let c = i % 3;
                plane.iter().map(move |&v| (f64::from(v) * n.std[c] + n.mean[c]) as f32)
            })
            .collect(),
    };
    let labels: Vec<u8> = d.labels.iter().map(|&l| l as u8).collect();
    Ok(write_cifar10(&labels, &to_bytes(&raw)))
}
