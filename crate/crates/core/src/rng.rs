//! SplitMix64 random streams.
//!
//! Every random decision in the crate is drawn from a stream keyed by a
//! tuple such as `(master_seed, frame_id, stage)`. Because SplitMix64 is a
//! counter-based generator, sub-streams can be derived for any key without
//! touching sibling streams, which keeps results independent of scheduling.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a sequence of keys.
#[inline(always)]
pub fn derive_seed(parent: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(parent ^ GOLDEN_GAMMA), |acc, &k| {
        mix64(acc ^ mix64(k.wrapping_add(GOLDEN_GAMMA)).rotate_left(17))
    })
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for `derive_seed(seed, keys)`.
    #[inline(always)]
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        Self::new(derive_seed(seed, keys))
    }

    /// Seed of a sub-stream; use with [`SplitMix64::keyed`].
    pub fn seed(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// The value `next()` would return after `offset` further calls, without
    /// advancing the stream.
    #[inline(always)]
    pub fn peek(&self, offset: u64) -> u64 {
        mix64(self.state.wrapping_add(GOLDEN_GAMMA.wrapping_mul(offset + 1)))
    }

    /// Uniform double in `[0, 1)` built from the top 53 bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next() >> 11) as i64) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// [`SplitMix64::uniform`] at a fixed stream offset.
    #[inline(always)]
    pub fn peek_uniform(&self, offset: u64) -> f64 {
        ((self.peek(offset) >> 11) as i64) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns exactly `lo` when `lo == hi`.
    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo + 1;
        if span == 0 {
            return self.next();
        }
        // Lemire's multiply-shift; the bias is < 2^-60 for the spans used here.
        lo + ((self.next() as u128 * span as u128) >> 64) as u64
    }

    /// Bernoulli trial: true with probability `p` (never for 0, always for 1).
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
