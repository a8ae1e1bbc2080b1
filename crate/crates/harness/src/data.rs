//! Resolution of a [`DataConfig`] into train and test splits.

use std::path::{Path, PathBuf};

use dpscale_core::data::{load_cifar10_binary, load_mnist_idx, synth_gaussian_mixture, synth_images, Dataset};

use crate::config::DataConfig;
use crate::error::{Error, Result};

/// Environment variable naming the directory that holds real datasets.
pub const DATA_DIR_ENV: &str = "DPSCALE_DATA_DIR";

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn data_root() -> Result<PathBuf> {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
        _ => Err(Error::DataMissing(format!("{DATA_DIR_ENV} is not set"))),
    }
}

/// First existing candidate among `name` and `name.gz` under each directory.
fn find(dirs: &[PathBuf], name: &str) -> Result<PathBuf> {
    for d in dirs {
        for candidate in [d.join(name), d.join(format!("{name}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::DataMissing(format!(
        "{name} not found under {}",
        dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
    )))
}

fn prefix(d: Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < d.len() => d.subset(&(0..n).collect::<Vec<_>>()),
        _ => d,
    }
}

/// Synthetic generators produce train and test examples in one draw, so
/// both splits share class templates; the last `round(fraction·n)` are test.
fn split_synthetic(all: Dataset, n: usize) -> Splits {
    let idx: Vec<usize> = (0..all.len()).collect();
    Splits {
        train: all.subset(&idx[..n]),
        test: all.subset(&idx[n..]),
    }
}

fn test_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("test_fraction must lie in (0, 1], got {fraction}")));
    }
    Ok(((n as f64 * fraction).round() as usize).max(1))
}

pub fn load(cfg: &DataConfig) -> Result<Splits> {
    match *cfg {
        DataConfig::GaussianMixture {
            n,
            d,
            classes,
            separation,
            test_fraction,
            seed,
        } => {
            let all = synth_gaussian_mixture(n + test_count(n, test_fraction)?, d, classes, separation, seed)?;
            Ok(split_synthetic(all, n))
        }
        DataConfig::SynthImages {
            n,
            shape,
            classes,
            noise,
            test_fraction,
            seed,
        } => {
            let all = synth_images(n + test_count(n, test_fraction)?, shape, classes, noise, seed)?;
            Ok(split_synthetic(all, n))
        }
        DataConfig::Cifar10 { train_subset } => load_cifar10(&data_root()?, train_subset),
        DataConfig::Mnist { train_subset } => load_mnist(&data_root()?, train_subset),
    }
}

pub fn load_cifar10(root: &Path, train_subset: Option<usize>) -> Result<Splits> {
    let dirs = [root.join("cifar-10-batches-bin"), root.to_path_buf()];
    let train_paths = (1..=5)
        .map(|i| find(&dirs, &format!("data_batch_{i}.bin")))
        .collect::<Result<Vec<_>>>()?;
    let test_path = find(&dirs, "test_batch.bin")?;
    let train = load_cifar10_binary(&train_paths, None)?;
    let test = load_cifar10_binary(&[test_path], train.normalization.as_ref())?;
    Ok(Splits {
        train: prefix(train, train_subset),
        test,
    })
}

pub fn load_mnist(root: &Path, train_subset: Option<usize>) -> Result<Splits> {
    let dirs = [root.join("mnist"), root.to_path_buf()];
    let train = load_mnist_idx(
        find(&dirs, "train-images-idx3-ubyte")?,
        find(&dirs, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_mnist_idx(
        find(&dirs, "t10k-images-idx3-ubyte")?,
        find(&dirs, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok(Splits {
        train: prefix(train, train_subset),
        test,
    })
}
