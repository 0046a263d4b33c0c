//! Cryptographic primitives backing the secure-aggregation protocol.
//!
//! Everything lives in one prime-order group, NIST P-256: the homomorphic
//! vector hash raises per-dimension generators to signed fixed-point
//! exponents, key agreement is plain Diffie-Hellman over the same group,
//! commitments are SHA-256 hash commitments, and the pairwise mask expander
//! is AES-256 in CTR mode keyed by the agreed shared secret.

mod commit;
mod group;
mod hash;
mod keys;
mod prg;

pub use commit::{commit, decommit, Commitment, COMMITMENT_BYTES, RANDOMNESS_BYTES};
pub use group::{setup_group, GroupParams, POINT_BYTES};
pub use hash::{hf, hf_precomputed, precompute_fixed_base, HashDigest, PrecompTable};
pub use keys::{key_agree, keygen, KeyPair, SharedKey, SHARED_KEY_BYTES};
pub use prg::prg_mask;

use crate::fixedpoint::FixedVec;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CryptoError {
    #[error("dimension mismatch: vector has {got} elements, group expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("invalid public key encoding")]
    InvalidPublicKey,
    #[error("window bits {0} outside supported range [1, 16]")]
    InvalidWindowBits(u32),
}

/// A homomorphic hash evaluator. [`GroupParams`] hashes with on-line scalar
/// multiplications; [`PrecompTable`] answers the same queries from offline
/// fixed-base tables. Both produce identical digests for identical inputs.
pub trait VectorHasher: Send + Sync {
    fn dim(&self) -> usize;
    fn hash_vec(&self, x: &FixedVec) -> Result<HashDigest, CryptoError>;
}

impl VectorHasher for GroupParams {
    fn dim(&self) -> usize {
        GroupParams::dim(self)
    }

    fn hash_vec(&self, x: &FixedVec) -> Result<HashDigest, CryptoError> {
        hf(x, self)
    }
}

impl VectorHasher for PrecompTable {
    fn dim(&self) -> usize {
        PrecompTable::dim(self)
    }

    fn hash_vec(&self, x: &FixedVec) -> Result<HashDigest, CryptoError> {
        hf_precomputed(x, self)
    }
}
