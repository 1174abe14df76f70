//! Counter-based random streams.
//!
//! Every random quantity in the crate is a pure function of a master seed and
//! a small tuple of indices (replicate, mode, batch). A [`Stream`] is keyed by
//! `(seed, index)` and produces its words by hashing a running counter, so no
//! state is shared between workers and results never depend on scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; a bijection on `u64` with full avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child key from a parent key and an index. Used to build key trees
/// such as `seed -> experiment -> replicate -> purpose`.
#[inline]
pub fn derive(key: u64, index: u64) -> u64 {
    mix64(key ^ mix64(index.wrapping_add(GOLDEN)).rotate_left(17))
}

/// A counter-based stream: word `k` is `mix64(key + (k + 1) * GOLDEN)`.
#[derive(Clone, Debug)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, index: u64) -> Self {
        Stream { key: derive(seed, index), counter: 0 }
    }

    /// Stream keyed by a path of indices.
    pub fn keyed(seed: u64, path: &[u64]) -> Self {
        let key = path.iter().fold(seed, |k, &i| derive(k, i));
        Stream { key, counter: 0 }
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_word() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// A pair of independent standard normals (Box-Muller). Consumes exactly
    /// two words, which keeps per-mode draws a fixed function of the key.
    #[inline]
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_word() as u128 * n as u128) >> 64) as usize
    }
}
