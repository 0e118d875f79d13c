//! Counter-based Gaussian streams.
//!
//! A stream is identified by a 256-bit key derived from the run seed and a
//! list of labels; each fixed-size block of a stream is drawn from its own
//! ChaCha stream number, so any block can be generated independently of the
//! others and on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub const BLOCK_LEN: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn new(seed: u64, labels: &[&str]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        for label in labels {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
        }
        Self(hasher.finalize().into())
    }

    pub fn block_rng(&self, block: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(block);
        rng
    }

    /// Adds `sigma * N(0, 1)` draws to `out`, which starts at sample `offset`
    /// of the stream. Results do not depend on how the caller chunks the work.
    pub fn add_gaussian(&self, offset: usize, sigma: f64, out: &mut [f64]) {
        if sigma == 0.0 {
            return;
        }
        let mut pos = offset;
        let mut done = 0;
        while done < out.len() {
            let block = pos / BLOCK_LEN;
            let within = pos % BLOCK_LEN;
            let take = (BLOCK_LEN - within).min(out.len() - done);
            let mut rng = self.block_rng(block as u64);
            for _ in 0..within {
                let _: f64 = rng.sample(StandardNormal);
            }
            for slot in &mut out[done..done + take] {
                let z: f64 = rng.sample(StandardNormal);
                *slot += sigma * z;
            }
            pos += take;
            done += take;
        }
    }

    pub fn gaussian(&self, len: usize, sigma: f64) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.add_gaussian(0, sigma, &mut out);
        out
    }

    /// Uniform draw in (0, 1] from a dedicated stream number.
    pub fn uniform(&self, stream: u64) -> f64 {
        let mut rng = self.block_rng(stream);
        1.0 - rng.random::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_does_not_change_the_stream() {
        let key = StreamKey::new(7, &["sensor", "a"]);
        let whole = key.gaussian(3 * BLOCK_LEN / 2 + 17, 1.0);
        let mut pieces = vec![0.0; whole.len()];
        let split = BLOCK_LEN - 5;
        key.add_gaussian(0, 1.0, &mut pieces[..split]);
        key.add_gaussian(split, 1.0, &mut pieces[split..]);
        assert_eq!(whole, pieces);
    }

    #[test]
    fn labels_and_seeds_separate_streams() {
        let a = StreamKey::new(1, &["x"]).gaussian(8, 1.0);
        let b = StreamKey::new(2, &["x"]).gaussian(8, 1.0);
        let c = StreamKey::new(1, &["y"]).gaussian(8, 1.0);
        let d = StreamKey::new(1, &["x", ""]).gaussian(8, 1.0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
