//! Counter-based random numbers.
//!
//! Every draw is a pure function of its integer coordinates, so paths can be
//! generated in any order (or in parallel) and still be bit-identical.

/// SplitMix64 finalizer (Steele, Lea & Flood; constants from Stafford's
/// "Mix13" variant).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Folds a list of words into one 64-bit key.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3_u64;
    for &w in words {
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ w);
    }
    h
}

/// Seed for path `path_id` under `master_seed`.
pub fn derive_seed(master_seed: u64, path_id: u64) -> u64 {
    hash_words(&[master_seed, path_id])
}

/// Uniform in the open interval (0, 1) built from the top 52 bits.
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal at the given coordinates (Box–Muller, cosine branch).
pub fn standard_normal(words: &[u64]) -> f64 {
    let key = hash_words(words);
    let u1 = unit_open(key);
    let u2 = unit_open(mix64(key ^ GOLDEN_GAMMA));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Small sequential generator for resampling and random test inputs.
#[derive(Debug, Clone)]
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        unit_open(self.next_u64())
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let a = self.next_u64();
        standard_normal(&[a])
    }
}
