//! Seed derivation.
//!
//! Every random stream in the pipeline is keyed by a base seed plus a path of
//! labels (cell, stage, split, image index, ...). Two different paths give
//! unrelated streams, so adding work never shifts the randomness of existing work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Hashes `base` together with `labels` into a new 64-bit seed.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"spi-seed");
    hasher.update(base.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Seed for the `index`-th item of a stream.
pub fn derive_indexed(base: u64, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"spi-index");
    hasher.update(base.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
