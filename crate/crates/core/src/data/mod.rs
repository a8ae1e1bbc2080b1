//! In-memory datasets, format readers, synthetic generators and samplers.

mod cifar;
mod idx;
mod sampler;
mod synth;

pub use cifar::{dataset_to_cifar10, load_cifar10_binary, parse_cifar10, write_cifar10, CIFAR10_RECORD};
pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use sampler::{Sampler, SamplingMode};
pub use synth::{synth_gaussian_mixture, synth_images};

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::Batch;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Element, Tensor};

/// Per-channel affine normalization `x ↦ (x − mean)/std` applied at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A labelled, fully memory-resident dataset with `f32` features.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Shape of one example, e.g. `[3, 32, 32]`.
    pub example_shape: Vec<usize>,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        example_shape: Vec<usize>,
        features: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let row: usize = example_shape.iter().product();
        if row == 0 || features.len() != row * labels.len() {
            return Err(invalid(format!(
                "{} features cannot hold {} examples of shape {example_shape:?}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            name: name.into(),
            example_shape,
            features,
            labels,
            num_classes,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_len(&self) -> usize {
        self.example_shape.iter().product()
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let r = self.example_len();
        &self.features[i * r..(i + 1) * r]
    }

    /// Gathers `indices` into a batch tensor of shape `[len, example_shape..]`.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Batch<T> {
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.example_shape);
        let mut data = Vec::with_capacity(indices.len() * self.example_len());
        for &i in indices {
            data.extend(self.example(i).iter().map(|&v| T::lit(f64::from(v))));
        }
        Batch {
            x: Tensor::new(shape, data).expect("gathered rows match the shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.example_len());
        for &i in indices {
            features.extend_from_slice(self.example(i));
        }
        Dataset {
            name: self.name.clone(),
            example_shape: self.example_shape.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Class-stratified, seed-deterministic split into `(public, private)` with
/// `round(fraction·count)` examples of each class going to the public side.
/// Returns the index sets alongside the datasets.
pub fn public_private_split_indices(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut public, mut private) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        public.extend_from_slice(&idx[..k]);
        private.extend_from_slice(&idx[k..]);
    }
    public.sort_unstable();
    private.sort_unstable();
    Ok((public, private))
}

pub fn public_private_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (public, private) = public_private_split_indices(dataset, fraction, seed)?;
    Ok((dataset.subset(&public), dataset.subset(&private)))
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::MultiGzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}
