//! Pairwise mask expansion: `PRG(ck || k || t)` as a residue vector.

use aes::Aes256;
use ctr::cipher::{KeyIvInit, StreamCipher};
use sha2::{Digest, Sha256};

use super::keys::SharedKey;
use crate::fixedpoint::{FixedParams, FixedVec};

type Aes256Ctr = ctr::Ctr128BE<Aes256>;

/// Expands a shared key into a deterministic pseudorandom vector of `dim`
/// residues in `[0, B)` for aggregation round `(item, iter)`.
///
/// The AES-CTR nonce is `SHA-256(item as 8 LE bytes || iter as 8 LE bytes)`
/// truncated to 16 bytes; each element consumes 8 keystream bytes read
/// little-endian and reduced mod `B`. `B` is a power of two dividing 2^64,
/// so the reduction is exactly uniform.
pub fn prg_mask(
    key: &SharedKey,
    item: u32,
    iter: u32,
    dim: usize,
    params: FixedParams,
) -> FixedVec {
    let mut hasher = Sha256::new();
    hasher.update((item as u64).to_le_bytes());
    hasher.update((iter as u64).to_le_bytes());
    let nonce_digest = hasher.finalize();
    let mut iv = [0u8; 16];
    iv.copy_from_slice(&nonce_digest[..16]);

    let mut cipher = Aes256Ctr::new(key.as_bytes().into(), &iv.into());
    let mut stream = vec![0u8; dim * 8];
    cipher.apply_keystream(&mut stream);

    let modulus = params.modulus();
    let values = stream
        .chunks_exact(8)
        .map(|chunk| u64::from_le_bytes(chunk.try_into().unwrap()) % modulus)
        .collect();
    FixedVec::from_residues(values, params).expect("reduction keeps residues in range")
}
