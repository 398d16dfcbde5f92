//! Counter-based random streams.
//!
//! Every random draw in a run comes from a stream addressed by
//! `(seed, position, iteration, purpose, counter)`. The tuple is hashed into a
//! ChaCha seed, so a resumed run reproduces any stream without having to
//! serialize generator state.

use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Address of one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RandomKey {
    pub seed: u64,
    pub position: u64,
    pub iteration: u64,
    pub purpose: &'static str,
    pub counter: u64,
}

impl RandomKey {
    pub fn new(seed: u64, purpose: &'static str) -> Self {
        Self {
            seed,
            position: 0,
            iteration: 0,
            purpose,
            counter: 0,
        }
    }

    pub fn position(mut self, position: usize) -> Self {
        self.position = position as u64;
        self
    }

    pub fn iteration(mut self, iteration: u64) -> Self {
        self.iteration = iteration;
        self
    }

    pub fn counter(mut self, counter: u64) -> Self {
        self.counter = counter;
        self
    }

    /// Same address with a different purpose label.
    pub fn purpose(mut self, purpose: &'static str) -> Self {
        self.purpose = purpose;
        self
    }

    /// 256-bit seed derived from the full address.
    pub fn derive_seed(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"aeromine-stream-v1");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.position.to_le_bytes());
        hasher.update(self.iteration.to_le_bytes());
        hasher.update((self.purpose.len() as u64).to_le_bytes());
        hasher.update(self.purpose.as_bytes());
        hasher.update(self.counter.to_le_bytes());
        let digest = hasher.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.derive_seed())
    }
}

impl fmt::Display for RandomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.seed, self.position, self.iteration, self.purpose, self.counter
        )
    }
}
