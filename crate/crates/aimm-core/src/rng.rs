//! Counter-based splittable PRNG used everywhere determinism matters.
//!
//! The generator is SplitMix64: a 64-bit counter advanced by the golden-ratio
//! increment, finalized with the Stafford mix. Streams are derived by folding
//! a list of integer keys (seed, domain tag, area index, sample index, ...)
//! through the same finalizer, so any (seed, indices) tuple maps to an
//! independent, platform-stable stream. No state beyond one u64 is kept,
//! which makes train-state serialization trivial.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stafford variant 13 finalizer (the SplitMix64 output mix).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream-domain tags, one per independent consumer of randomness.
pub mod domain {
    pub const SCENE: u64 = 1;
    pub const UE_PLACEMENT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const CORPUS: u64 = 5;
    pub const GRADCHECK: u64 = 6;
}

/// SplitMix64 generator over a derived stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream from a seed and a list of key integers.
    pub fn stream(seed: u64, keys: &[u64]) -> Self {
        let mut s = mix64(seed ^ GOLDEN);
        for &k in keys {
            s = mix64(s ^ mix64(k.wrapping_add(GOLDEN)));
        }
        SplitMix64 { state: s }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn restore(state: u64) -> Self {
        SplitMix64 { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
