//! Deterministic RNG derivation from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG stream from `(master, domain, index)`.
///
/// Every source of randomness in a run (profile initialization, key
/// generation, commitment randomness, delivery shuffling) draws from its own
/// domain-separated stream, so runs are reproducible regardless of actor
/// scheduling.
pub(crate) fn derive_rng(master: u64, domain: &str, index: u64) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"fedrec/seed/v1");
    hasher.update(master.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}
