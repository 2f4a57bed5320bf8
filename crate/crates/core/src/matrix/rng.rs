//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, position)`, so results do not
//! depend on call order or on how work is split across threads.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic, order-independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeterministicRng {
    seed: u64,
    key: u64,
}

impl DeterministicRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed ^ 0x5851_F42D_4C95_7F2D),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream identified by `stream`.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(mix64(self.key ^ mix64(stream.wrapping_add(GOLDEN))))
    }

    /// Raw 64-bit value at position `n`.
    #[inline]
    pub fn bits(&self, n: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN)),
        )
    }

    /// Uniform value in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, n: u64) -> f64 {
        (self.bits(n) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal value at position `n` (Box-Muller over positions
    /// `2n` and `2n + 1` of the underlying stream).
    pub fn normal(&self, n: u64) -> f64 {
        let u1 = 1.0 - self.uniform(2 * n);
        let u2 = self.uniform(2 * n + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn below(&self, n: u64, bound: u64) -> u64 {
        ((self.bits(n) as u128 * bound as u128) >> 64) as u64
    }
}
