//! Seedable, splittable random source.
//!
//! A [`RandomSource`] is a ChaCha12 generator addressed by a 256-bit key and a
//! 64-bit stream id. `RandomSource::new(seed, stream)` uses the key
//! `[seed, 0, 0, 0]`. Child streams are derived as follows: every child of a
//! given source shares one key, obtained by SplitMix64-mixing each lane of the
//! parent key with the parent stream id, and child `k` uses ChaCha stream `k`.
//! Siblings therefore never overlap, and distinct parents land on distinct
//! keys. Deriving a child never advances the parent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct RandomSource {
    key: [u64; 4],
    stream: u64,
    rng: ChaCha12Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::from_key([seed, 0, 0, 0], stream)
    }

    fn from_key(key: [u64; 4], stream: u64) -> Self {
        let mut bytes = [0u8; 32];
        for (chunk, lane) in bytes.chunks_exact_mut(8).zip(key) {
            chunk.copy_from_slice(&lane.to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(bytes);
        rng.set_stream(stream);
        Self { key, stream, rng }
    }

    /// The seed this source (or its root ancestor) was created from.
    pub fn seed(&self) -> u64 {
        self.key[0]
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream `index`, starting from its first draw.
    pub fn child(&self, index: u64) -> RandomSource {
        let mut key = [0u64; 4];
        for (lane, (out, parent)) in key.iter_mut().zip(self.key).enumerate() {
            let salt = splitmix64(self.stream ^ (lane as u64).wrapping_mul(GOLDEN_GAMMA));
            *out = splitmix64(parent ^ salt);
        }
        Self::from_key(key, index)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.standard_normal();
        }
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniformly random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            perm.swap(i, j);
        }
        perm
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
