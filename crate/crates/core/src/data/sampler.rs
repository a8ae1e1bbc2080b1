use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplingMode {
    /// Each example joins each batch independently with probability `q`.
    Poisson { q: f64 },
    /// Fixed-size slices of a fresh permutation every epoch; the last slice
    /// of an epoch may be short.
    Shuffled { batch_size: usize },
}

/// Index sampler over a dataset of `n` examples.
#[derive(Clone, Debug)]
pub struct Sampler {
    mode: SamplingMode,
    n: usize,
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    cursor: usize,
    geometric: Option<Geometric>,
}

impl Sampler {
    pub fn new(mode: SamplingMode, n: usize, seed: u64) -> Result<Self> {
        let geometric = match mode {
            SamplingMode::Poisson { q } => {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(invalid(format!("sampling rate must lie in (0, 1], got {q}")));
                }
                Some(Geometric::new(q).map_err(|e| invalid(e.to_string()))?)
            }
            SamplingMode::Shuffled { batch_size } => {
                if batch_size == 0 {
                    return Err(invalid("batch size must be positive"));
                }
                None
            }
        };
        if n == 0 {
            return Err(invalid("cannot sample from an empty dataset"));
        }
        Ok(Sampler {
            mode,
            n,
            rng: ChaCha8Rng::seed_from_u64(seed),
            perm: Vec::new(),
            cursor: 0,
            geometric,
        })
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// True when batches are not Poisson-sampled, so the accountant's
    /// amplification assumption does not strictly hold.
    pub fn sampling_mismatch(&self) -> bool {
        matches!(self.mode, SamplingMode::Shuffled { .. })
    }

    /// Indices of the next batch, ascending for Poisson batches. May be empty.
    pub fn next_batch(&mut self) -> Vec<usize> {
        match self.mode {
            SamplingMode::Poisson { .. } => {
                let geo = self.geometric.expect("poisson sampler has a gap distribution");
                let mut out = Vec::new();
                // Gaps between successive inclusions are geometric, which is
                // equivalent to one Bernoulli(q) draw per index.
                let mut i = geo.sample(&mut self.rng);
                while i < self.n as u64 {
                    out.push(i as usize);
                    i = i.saturating_add(1).saturating_add(geo.sample(&mut self.rng));
                }
                out
            }
            SamplingMode::Shuffled { batch_size } => {
                if self.cursor >= self.perm.len() {
                    self.perm = (0..self.n).collect();
                    self.perm.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let end = (self.cursor + batch_size).min(self.n);
                let out = self.perm[self.cursor..end].to_vec();
                self.cursor = end;
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rate_takes_everything() {
        let mut s = Sampler::new(SamplingMode::Poisson { q: 1.0 }, 17, 0).unwrap();
        assert_eq!(s.next_batch(), (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_epoch_covers_each_index_once() {
        let mut s = Sampler::new(SamplingMode::Shuffled { batch_size: 4 }, 10, 1).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        assert_eq!(seen.len(), 10);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(s.sampling_mismatch());
    }

    #[test]
    fn same_seed_same_batches() {
        let mode = SamplingMode::Poisson { q: 0.1 };
        let mut a = Sampler::new(mode, 100, 5).unwrap();
        let mut b = Sampler::new(mode, 100, 5).unwrap();
        for _ in 0..5 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }
}
