//! Diffie-Hellman key agreement over the hash group.

use core::fmt;

use p256::elliptic_curve::PrimeField;
use p256::{ProjectivePoint, Scalar};
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::group::{point_from_bytes, point_to_bytes, POINT_BYTES};
use super::CryptoError;

pub const SHARED_KEY_BYTES: usize = 32;

/// Long-term key pair of one user: `public = secret * g`.
#[derive(Clone)]
pub struct KeyPair {
    secret: Scalar,
    public: ProjectivePoint,
}

impl KeyPair {
    pub fn from_secret(secret: Scalar) -> Option<Self> {
        if secret == Scalar::ZERO {
            return None;
        }
        Some(Self {
            secret,
            public: ProjectivePoint::GENERATOR * secret,
        })
    }

    pub fn public_bytes(&self) -> [u8; POINT_BYTES] {
        point_to_bytes(&self.public)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyPair(..)")
    }
}

/// Pairwise shared secret; identical on both sides of the exchange.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SharedKey([u8; SHARED_KEY_BYTES]);

impl SharedKey {
    pub fn as_bytes(&self) -> &[u8; SHARED_KEY_BYTES] {
        &self.0
    }
}

impl fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

/// Samples a uniform nonzero scalar by rejection and forms the key pair.
pub fn keygen(rng: &mut impl RngCore) -> KeyPair {
    loop {
        let mut repr = [0u8; 32];
        rng.fill_bytes(&mut repr);
        if let Some(secret) = Scalar::from_repr(repr.into()).into_option() {
            if let Some(pair) = KeyPair::from_secret(secret) {
                return pair;
            }
        }
    }
}

/// `KDF(secret * peer_public)`, symmetric in the two parties.
pub fn key_agree(own: &KeyPair, peer_public: &[u8; POINT_BYTES]) -> Result<SharedKey, CryptoError> {
    let peer = point_from_bytes(peer_public).ok_or(CryptoError::InvalidPublicKey)?;
    if peer == ProjectivePoint::IDENTITY {
        return Err(CryptoError::InvalidPublicKey);
    }
    let shared_point = peer * own.secret;
    let mut hasher = Sha256::new();
    hasher.update(b"fedrec/kdf/v1");
    hasher.update(point_to_bytes(&shared_point));
    let digest = hasher.finalize();
    let mut key = [0u8; SHARED_KEY_BYTES];
    key.copy_from_slice(&digest);
    Ok(SharedKey(key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    #[test]
    fn agreement_is_symmetric() {
        let mut rng = derive_rng(1, "test/keys", 0);
        let a = keygen(&mut rng);
        let b = keygen(&mut rng);
        let ab = key_agree(&a, &b.public_bytes()).unwrap();
        let ba = key_agree(&b, &a.public_bytes()).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn unit_scalar_yields_kdf_of_generator() {
        let unit = KeyPair::from_secret(Scalar::ONE).unwrap();
        let mut rng = derive_rng(1, "test/keys", 1);
        let peer = keygen(&mut rng);
        // With msk = 1, the DH point is exactly the peer's public key.
        let shared = key_agree(&unit, &peer.public_bytes()).unwrap();
        let mut hasher = Sha256::new();
        hasher.update(b"fedrec/kdf/v1");
        hasher.update(peer.public_bytes());
        let digest = hasher.finalize();
        assert_eq!(shared.as_bytes()[..], digest[..]);
    }

    #[test]
    fn three_users_derive_three_distinct_keys() {
        let mut rng = derive_rng(1, "test/keys", 2);
        let users: Vec<_> = (0..3).map(|_| keygen(&mut rng)).collect();
        let k01 = key_agree(&users[0], &users[1].public_bytes()).unwrap();
        let k02 = key_agree(&users[0], &users[2].public_bytes()).unwrap();
        let k12 = key_agree(&users[1], &users[2].public_bytes()).unwrap();
        assert_ne!(k01, k02);
        assert_ne!(k01, k12);
        assert_ne!(k02, k12);
    }

    #[test]
    fn invalid_public_key_is_rejected() {
        let mut rng = derive_rng(1, "test/keys", 3);
        let own = keygen(&mut rng);
        let mut junk = [0xffu8; POINT_BYTES];
        junk[0] = 0x02;
        // Not every x coordinate is on the curve; 0xff..ff is not.
        assert_eq!(
            key_agree(&own, &junk),
            Err(CryptoError::InvalidPublicKey)
        );
        // The identity encoding is also not a legal public key.
        assert_eq!(
            key_agree(&own, &[0u8; POINT_BYTES]),
            Err(CryptoError::InvalidPublicKey)
        );
    }
}
