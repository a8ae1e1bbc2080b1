use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::ParamTree;
use crate::tensor::Element;

/// Noise generator for shard `shard` at optimizer step `step`.
///
/// Each (seed, shard) pair keys its own ChaCha stream and the step selects the
/// stream id, so any shard's draw can be regenerated independently.
pub fn shard_rng(seed: u64, shard: u64, step: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&shard.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(step);
    rng
}

fn shard_draw(seed: u64, shard: u64, step: u64, len: usize) -> Vec<f64> {
    let mut rng = shard_rng(seed, shard, step);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Adds `k` independent Gaussian draws of std `(σ/√k)·C` to every trainable
/// coordinate of `g`, in parameter order.
///
/// With `parallel` the shards are drawn on separate threads; shard sums are
/// still reduced in shard order, so the result is bit-identical to the serial run.
pub fn add_noise<T: Element>(
    g: &mut ParamTree<T>,
    clip_norm: f64,
    sigma: f64,
    shards: usize,
    seed: u64,
    step: u64,
    parallel: bool,
) {
    if sigma == 0.0 || shards == 0 {
        return;
    }
    let len = g.num_trainable_elements();
    let draws: Vec<Vec<f64>> = if parallel && shards > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..shards as u64)
                .map(|k| s.spawn(move || shard_draw(seed, k, step, len)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("noise shard panicked")).collect()
        })
    } else {
        (0..shards as u64).map(|k| shard_draw(seed, k, step, len)).collect()
    };
    let std = sigma / (shards as f64).sqrt() * clip_norm;
    let mut total = vec![0.0f64; len];
    for d in &draws {
        for (t, z) in total.iter_mut().zip(d) {
            *t += std * z;
        }
    }
    let mut flat = g.flatten_trainable();
    for (v, n) in flat.iter_mut().zip(&total) {
        *v += T::lit(*n);
    }
    g.unflatten_trainable(&flat).expect("noise matches the gradient layout");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn tree(n: usize) -> ParamTree {
        let mut p = ParamTree::new();
        p.insert("a", Tensor::zeros(&[n]), true).unwrap();
        p
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut g = tree(5);
        g.value_mut("a").unwrap().fill(2.0);
        let before = g.clone();
        add_noise(&mut g, 1.0, 0.0, 4, 1, 1, false);
        assert_eq!(g.max_abs_diff(&before).unwrap(), 0.0);
    }

    #[test]
    fn parallel_equals_serial() {
        let mut a = tree(1000);
        let mut b = tree(1000);
        add_noise(&mut a, 1.3, 0.7, 8, 42, 17, false);
        add_noise(&mut b, 1.3, 0.7, 8, 42, 17, true);
        assert_eq!(a.value("a").unwrap(), b.value("a").unwrap());
    }

    #[test]
    fn steps_and_shards_draw_different_noise() {
        assert_ne!(shard_draw(1, 0, 0, 4), shard_draw(1, 0, 1, 4));
        assert_ne!(shard_draw(1, 0, 0, 4), shard_draw(1, 1, 0, 4));
        assert_eq!(shard_draw(1, 2, 3, 4), shard_draw(1, 2, 3, 4));
    }
}
