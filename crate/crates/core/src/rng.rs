//! Named, seed-derived random streams.
//!
//! Every consumer of randomness (split, shuffle, dropout, per-tensor init)
//! draws from its own stream keyed by `(seed, name)`. Changing one factor of
//! an experiment therefore never shifts the draws of another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(name))
    }

    /// Stream keyed by a name plus integer coordinates (epoch, sample, ...).
    pub fn indexed(&self, name: &str, idx: &[u64]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.key(name));
        for i in idx {
            h.update(i.to_le_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Hash of the first draws of a stream; equal fingerprints mean equal
    /// streams.
    pub fn fingerprint(&self, name: &str) -> String {
        let mut rng = self.stream(name);
        let mut h = Sha256::new();
        for _ in 0..8 {
            h.update(rng.next_u64().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    fn key(&self, name: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"medfuse-stream");
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        h.finalize().into()
    }
}
