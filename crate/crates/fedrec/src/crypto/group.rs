//! Prime-order group setup and canonical point serialization.

use p256::elliptic_curve::group::GroupEncoding;
use p256::ProjectivePoint;
use sha2::{Digest, Sha256};

use super::CryptoError;

/// Serialized group element size: SEC1 compressed form. The identity, which
/// has no SEC1 compressed encoding, serializes as 33 zero bytes.
pub const POINT_BYTES: usize = 33;

pub(crate) fn point_to_bytes(point: &ProjectivePoint) -> [u8; POINT_BYTES] {
    let mut out = [0u8; POINT_BYTES];
    out.copy_from_slice(point.to_bytes().as_slice());
    out
}

pub(crate) fn point_from_bytes(bytes: &[u8; POINT_BYTES]) -> Option<ProjectivePoint> {
    ProjectivePoint::from_bytes(bytes.into()).into_option()
}

/// Group description shared by all parties: the curve (fixed to P-256) and
/// `d` independent generators derived from a public seed, one per latent
/// dimension.
#[derive(Debug, Clone)]
pub struct GroupParams {
    seed: Vec<u8>,
    generators: Vec<ProjectivePoint>,
}

impl GroupParams {
    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn seed(&self) -> &[u8] {
        &self.seed
    }

    pub(crate) fn generator(&self, l: usize) -> &ProjectivePoint {
        &self.generators[l]
    }
}

/// Derives `dim` generators deterministically from `seed` so every party
/// reconstructs identical parameters without a trusted dealer.
///
/// Each generator comes from domain-separated try-and-increment: candidate x
/// coordinates are hashed out of `(seed, l, counter)` until one lies on the
/// curve. Nobody learns a discrete-log relation between any two of them,
/// which is what collision resistance of the vector hash rests on.
pub fn setup_group(dim: usize, seed: &[u8]) -> GroupParams {
    assert!(dim >= 1, "group needs at least one generator");
    let generators = (0..dim as u32)
        .map(|l| derive_generator(seed, l))
        .collect();
    GroupParams {
        seed: seed.to_vec(),
        generators,
    }
}

fn derive_generator(seed: &[u8], index: u32) -> ProjectivePoint {
    for counter in 0u32.. {
        let mut hasher = Sha256::new();
        hasher.update(b"fedrec/hash-to-group/v1");
        hasher.update((seed.len() as u64).to_le_bytes());
        hasher.update(seed);
        hasher.update(index.to_le_bytes());
        hasher.update(counter.to_le_bytes());
        let digest = hasher.finalize();

        let mut candidate = [0u8; POINT_BYTES];
        candidate[0] = 0x02; // even-y compressed tag
        candidate[1..].copy_from_slice(&digest);
        if let Some(point) = point_from_bytes(&candidate) {
            debug_assert!(point != ProjectivePoint::IDENTITY);
            return point;
        }
    }
    unreachable!("curve point found within u32 counter space")
}

impl GroupParams {
    /// Serialization helper used by the wire format and commitments.
    pub fn element_bytes(point: &ProjectivePoint) -> [u8; POINT_BYTES] {
        point_to_bytes(point)
    }

    pub fn element_from_bytes(bytes: &[u8; POINT_BYTES]) -> Result<ProjectivePoint, CryptoError> {
        point_from_bytes(bytes).ok_or(CryptoError::InvalidPublicKey)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_is_deterministic() {
        let a = setup_group(4, b"seed-A");
        let b = setup_group(4, b"seed-A");
        assert_eq!(a.generators, b.generators);
    }

    #[test]
    fn different_seeds_give_disjoint_generators() {
        let a = setup_group(2, b"seed-A");
        let b = setup_group(2, b"seed-B");
        for ga in &a.generators {
            for gb in &b.generators {
                assert_ne!(ga, gb);
            }
        }
    }

    #[test]
    fn single_generator_is_not_identity() {
        let gp = setup_group(1, b"solo");
        assert_ne!(*gp.generator(0), ProjectivePoint::IDENTITY);
    }

    #[test]
    fn generators_within_a_group_are_distinct() {
        let gp = setup_group(8, b"many");
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_ne!(gp.generator(i), gp.generator(j));
            }
        }
    }

    #[test]
    fn point_roundtrip_including_identity() {
        let gp = setup_group(1, b"rt");
        let g = gp.generator(0);
        let bytes = point_to_bytes(g);
        assert_eq!(point_from_bytes(&bytes).unwrap(), *g);

        let id_bytes = point_to_bytes(&ProjectivePoint::IDENTITY);
        assert_eq!(id_bytes, [0u8; POINT_BYTES]);
        assert_eq!(
            point_from_bytes(&id_bytes).unwrap(),
            ProjectivePoint::IDENTITY
        );
    }
}
