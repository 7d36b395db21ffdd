//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a [`StreamRng`] obtained
//! from a [`StreamKey`]. Keys form a tree: a root key is derived from a
//! 64-bit seed and children are derived by index, so the stream for
//! `(seed, trial, i, j)` never depends on the order in which other streams
//! were consumed. Serial and parallel runs therefore agree bit for bit.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifier of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x6a09_e667_f3bc_c908))
    }

    #[inline]
    pub fn child(self, index: u64) -> Self {
        let salted = mix64(index.wrapping_add(GOLDEN).wrapping_mul(0xd1b5_4a32_d192_ed03));
        StreamKey(mix64(self.0 ^ salted).wrapping_add(GOLDEN))
    }

    /// Stream for matrix coordinate `(i, j)`.
    #[inline]
    pub fn entry(self, i: usize, j: usize) -> Self {
        self.child(i as u64).child(j as u64)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Rebuilds a key from [`StreamKey::value`].
    pub fn from_value(value: u64) -> Self {
        StreamKey(value)
    }

    #[inline]
    pub fn rng(self) -> StreamRng {
        StreamRng {
            key: self.0,
            counter: 0,
        }
    }
}

/// SplitMix64 generator whose `k`-th output is a pure function of `(key, k)`.
#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    /// Uniform draw on `(0, 1]`, never zero.
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
