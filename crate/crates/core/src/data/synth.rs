use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{invalid, Result};

fn balanced_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

/// Class-conditional unit-variance spherical Gaussians whose means are
/// pairwise `separation` apart, with balanced classes.
///
/// Means are `separation/√2` times orthonormal directions (a random rotation
/// of coordinate axes), so `classes ≤ d` is required.
pub fn synth_gaussian_mixture(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || classes < 2 || classes > d {
        return Err(invalid(format!(
            "need n > 0 and 2 ≤ classes ≤ d, got n={n} d={d} classes={classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Gram–Schmidt on Gaussian vectors gives orthonormal mean directions.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while dirs.len() < classes {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for u in &dirs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            dirs.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let scale = separation / std::f64::consts::SQRT_2;
    let labels = balanced_labels(&mut rng, n, classes);
    let mut features = Vec::with_capacity(n * d);
    for &l in &labels {
        for u in &dirs[l] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push((scale * u + z) as f32);
        }
    }
    Dataset::new(format!("gaussian_mixture_d{d}_k{classes}"), vec![d], features, labels, classes)
}

/// Image-shaped classification data: each class has a smooth random template
/// (a few low-frequency cosine waves per channel); examples are the template
/// at a random contrast in `[0.5, 1.5]` plus i.i.d. Gaussian pixel noise.
pub fn synth_images(n: usize, shape: [usize; 3], classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let [c, h, w] = shape;
    if n == 0 || c * h * w == 0 || classes < 2 {
        return Err(invalid("need n > 0, a non-empty shape and at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut t = vec![0.0; c * plane];
            for ch in 0..c {
                for _ in 0..3 {
                    let fy = rng.random_range(0.0..3.0) * std::f64::consts::PI / h as f64;
                    let fx = rng.random_range(0.0..3.0) * std::f64::consts::PI / w as f64;
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let amp: f64 = StandardNormal.sample(&mut rng);
                    for y in 0..h {
                        for x in 0..w {
                            t[ch * plane + y * w + x] += amp * (fy * y as f64 + fx * x as f64 + phase).cos();
                        }
                    }
                }
            }
            t
        })
        .collect();
    let labels = balanced_labels(&mut rng, n, classes);
    let mut features = Vec::with_capacity(n * c * plane);
    for &l in &labels {
        let contrast = rng.random_range(0.5..1.5);
        for &t in &templates[l] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push((contrast * t + noise * z) as f32);
        }
    }
    Dataset::new(format!("synth_images_{c}x{h}x{w}_k{classes}"), vec![c, h, w], features, labels, classes)
}
