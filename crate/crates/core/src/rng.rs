//! Seeded random streams.
//!
//! Every stochastic decision draws from a stream derived from the scenario
//! seed and a list of labels (service id, query id, trial index, ...), so
//! values never depend on evaluation order or thread interleaving.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn derive_seed(seed: u64, labels: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    h.finalize().into()
}

pub fn stream(seed: u64, labels: &[&str]) -> Stream {
    ChaCha8Rng::from_seed(derive_seed(seed, labels))
}

/// A 64-bit child seed, for handing to nested runs.
pub fn child_seed(seed: u64, labels: &[&str]) -> u64 {
    let bytes = derive_seed(seed, labels);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
