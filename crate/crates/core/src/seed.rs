//! Per-module seed derivation from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// `sha256(root ‖ module ‖ worker)` truncated to 64 bits.
pub fn derive_seed(root: u64, module: &str, worker: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((module.len() as u64).to_le_bytes());
    h.update(module.as_bytes());
    h.update(worker.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn derive_rng(root: u64, module: &str, worker: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, module, worker))
}
