//! SHA-256 hash commitments.

use sha2::{Digest, Sha256};

pub const COMMITMENT_BYTES: usize = 32;
pub const RANDOMNESS_BYTES: usize = 32;

/// Binding, hiding digest of a message under fresh randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Commitment([u8; COMMITMENT_BYTES]);

impl Commitment {
    pub fn as_bytes(&self) -> &[u8; COMMITMENT_BYTES] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; COMMITMENT_BYTES]) -> Self {
        Self(bytes)
    }
}

/// `H(tag || len(message) || message || r)`.
pub fn commit(message: &[u8], randomness: &[u8; RANDOMNESS_BYTES]) -> Commitment {
    let mut hasher = Sha256::new();
    hasher.update(b"fedrec/commit/v1");
    hasher.update((message.len() as u64).to_le_bytes());
    hasher.update(message);
    hasher.update(randomness);
    let digest = hasher.finalize();
    let mut out = [0u8; COMMITMENT_BYTES];
    out.copy_from_slice(&digest);
    Commitment(out)
}

/// True iff `(message, randomness)` opens `commitment`.
pub fn decommit(
    message: &[u8],
    commitment: &Commitment,
    randomness: &[u8; RANDOMNESS_BYTES],
) -> bool {
    commit(message, randomness) == *commitment
}
