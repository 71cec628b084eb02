//! Seeded random number generation.
//!
//! Every random draw in the pipeline goes through [`Rng`], a ChaCha8 stream
//! cipher generator. ChaCha output is specified bit-for-bit, so an equal seed
//! yields an equal stream on every platform. Independent sub-streams (one per
//! wind series, one per clip, one per training shuffle, ...) are obtained with
//! [`Rng::derive`], which selects a ChaCha stream id instead of consuming
//! numbers from the parent.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator on ChaCha stream `stream` of this seed. Does not
    /// advance `self`; deriving the same stream twice gives the same numbers.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
