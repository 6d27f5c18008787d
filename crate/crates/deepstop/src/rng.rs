//! Counter-based random number streams.
//!
//! Every consumer of randomness holds a [`Stream`], a 64-bit key derived by
//! hashing the base seed with structural tags (path index, time index, inner
//! sample index, ...). The i-th variate of a stream is a pure function of
//! (key, i), so path batches can be partitioned across workers arbitrarily and
//! still reproduce the single-threaded output bit for bit.
//!
//! Normal variates are produced by applying the inverse normal CDF to the
//! stream's uniforms, which keeps every draw addressable by counter.

use crate::stats::normal_quantile;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const COUNTER_SALT: u64 = 0xd134_2543_de82_ef95;

/// SplitMix64 output function. Bijective on u64, equidistributed. Also used
/// as the mixing step when hashing configurations into seeds.
#[inline]
pub(crate) fn mix(state: u64) -> u64 {
    let mut z = state.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A splittable counter-based random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { key: mix(seed) }
    }

    /// Derives a child stream. Children with distinct tags are independent
    /// for Monte Carlo purposes, as are children of distinct parents.
    #[inline]
    pub fn derive(self, tag: u64) -> Self {
        Stream { key: mix(self.key ^ mix(tag)) }
    }

    #[inline]
    pub fn index(self, i: usize) -> u64 {
        mix(self.key ^ (i as u64).wrapping_mul(COUNTER_SALT))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(self, i: usize) -> f64 {
        // 53 explicit bits, offset half a step away from both endpoints.
        ((self.index(i) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via inverse-CDF transform of `uniform(i)`.
    #[inline]
    pub fn normal(self, i: usize) -> f64 {
        normal_quantile(self.uniform(i))
    }

    /// Fills `out` with standard normals at counters `base..base + out.len()`.
    pub fn fill_normal(self, base: usize, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.normal(base + k);
        }
    }
}
