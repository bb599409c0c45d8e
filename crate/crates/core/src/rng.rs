//! Deterministic, splittable random streams.
//!
//! A stream is identified by a root seed and a path of 64-bit labels. The
//! generator state of a stream depends only on that identity, never on how
//! many values the parent has drawn, so children can be derived in any order
//! (and on any thread) and still replay identically.
//!
//! The generator is xoshiro256++ (period 2^256 - 1). Gaussian draws use the
//! ziggurat sampler of `rand_distr::StandardNormal`; the transform is fixed
//! for a given build, which is the extent of the reproducibility contract.

use rand::{Rng, RngExt, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A random stream with a recorded derivation path.
#[derive(Debug, Clone)]
pub struct RngStream {
    root: u64,
    path: Vec<u64>,
    key: [u64; 4],
    rng: Xoshiro256PlusPlus,
}

impl RngStream {
    /// Root stream for a seed.
    pub fn new(seed: u64) -> Self {
        let key = [
            splitmix64(seed),
            splitmix64(seed ^ 0x5851_f42d_4c95_7f2d),
            splitmix64(seed.rotate_left(17) ^ 0x1405_7b7e_f767_814f),
            splitmix64(seed.rotate_left(41) ^ 0xd6e8_feb8_6659_fd93),
        ];
        Self::from_key(seed, Vec::new(), key)
    }

    fn from_key(root: u64, path: Vec<u64>, key: [u64; 4]) -> Self {
        let mut seed = [0u8; 32];
        for (chunk, word) in seed.chunks_exact_mut(8).zip(key.iter()) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        // an all-zero state is the one fixed point of xoshiro
        if key.iter().all(|&w| w == 0) {
            seed[0] = 1;
        }
        Self {
            root,
            path,
            key,
            rng: Xoshiro256PlusPlus::from_seed(seed),
        }
    }

    /// Child stream labelled `label`. The parent is not advanced.
    pub fn split(&self, label: u64) -> Self {
        let mixed = splitmix64(label ^ GOLDEN.rotate_left(7));
        let mut key = [0u64; 4];
        let mut acc = mixed;
        for (i, k) in key.iter_mut().enumerate() {
            acc = splitmix64(acc ^ self.key[i] ^ (i as u64).wrapping_mul(GOLDEN));
            *k = acc;
        }
        let mut path = self.path.clone();
        path.push(label);
        Self::from_key(self.root, path, key)
    }

    pub fn root_seed(&self) -> u64 {
        self.root
    }

    /// Labels applied since the root, outermost first.
    pub fn seed_path(&self) -> &[u64] {
        &self.path
    }

    /// Human-readable identity, e.g. `0/1/42`.
    pub fn describe(&self) -> String {
        let mut s = self.root.to_string();
        for label in &self.path {
            s.push('/');
            s.push_str(&label.to_string());
        }
        s
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// One standard-normal vector of length `dim`.
    pub fn draw_gaussian(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.standard_normal()).collect()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}
