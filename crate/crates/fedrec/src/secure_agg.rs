//! Masking algebra and verification math for one aggregation round.
//!
//! Each participant's input for item `k` is the encoding of
//! `(1/n_k) * v_k - G_i`: the item row's equal share minus the user's item
//! gradient, so the modular sum of all inputs is the updated item row.
//! Inputs are blinded with pairwise PRG masks that cancel in the sum, and
//! verified afterwards by comparing the hash of the announced aggregate with
//! the product of the participants' committed input hashes.

use std::collections::BTreeMap;

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{
    commit, prg_mask, Commitment, CryptoError, HashDigest, SharedKey, VectorHasher,
    RANDOMNESS_BYTES,
};
use crate::fixedpoint::{FixedParams, FixedPointError, FixedVec};

#[derive(Debug, Error, PartialEq)]
pub enum AggError {
    #[error("fixed-point failure: {0}")]
    FixedPoint(#[from] FixedPointError),
    #[error("crypto failure: {0}")]
    Crypto(#[from] CryptoError),
    #[error("participant set rejected: {0}")]
    InvalidParticipants(String),
    #[error("missing shared key for user {0}")]
    MissingKey(u32),
    #[error("participant mismatch for item {item}: {reason}")]
    ParticipantMismatch { item: u32, reason: String },
}

/// Sorted, duplicate-free set of users contributing to one item this
/// iteration: the item's raters in part-upload mode, all users in
/// full-upload mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantSet(Vec<u32>);

impl ParticipantSet {
    pub fn new(users: Vec<u32>) -> Result<Self, AggError> {
        if users.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AggError::InvalidParticipants(
                "participants must be sorted ascending without duplicates".into(),
            ));
        }
        Ok(Self(users))
    }

    pub fn members(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, user: u32) -> bool {
        self.0.binary_search(&user).is_ok()
    }
}

/// One user's unmasked aggregation input for `(item, iter)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggInput {
    pub item: u32,
    pub iter: u32,
    pub vec: FixedVec,
}

/// A masked input as sent to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedVec {
    pub item: u32,
    pub iter: u32,
    pub owner: u32,
    pub vec: FixedVec,
}

/// Encodes `v_prev / n_k - grad` elementwise.
pub fn build_input(
    v_prev: &[f64],
    grad: &[f64],
    n_k: u32,
    params: FixedParams,
    item: u32,
    iter: u32,
) -> Result<AggInput, AggError> {
    assert!(n_k >= 1, "input construction needs at least one participant");
    if v_prev.len() != grad.len() {
        return Err(AggError::FixedPoint(FixedPointError::DimensionMismatch {
            left: v_prev.len(),
            right: grad.len(),
        }));
    }
    let reals: Vec<f64> = v_prev
        .iter()
        .zip(grad)
        .map(|(&v, &g)| v / n_k as f64 - g)
        .collect();
    let vec = FixedVec::encode(&reals, params)?;
    Ok(AggInput { item, iter, vec })
}

/// Applies the pairwise masks: the lower-indexed party of each pair adds the
/// PRG expansion, the higher-indexed one subtracts it, so the masks cancel
/// in the modular sum over the full participant set.
pub fn mask(
    input: &AggInput,
    owner: u32,
    participants: &ParticipantSet,
    keys: &BTreeMap<u32, SharedKey>,
    params: FixedParams,
) -> Result<MaskedVec, AggError> {
    debug_assert!(participants.contains(owner), "owner must participate");
    let mut vec = input.vec.clone();
    for &peer in participants.members() {
        if peer == owner {
            continue;
        }
        let key = keys.get(&peer).ok_or(AggError::MissingKey(peer))?;
        let stream = prg_mask(key, input.item, input.iter, vec.len(), params);
        vec.add_signed_in_place(&stream, owner < peer);
    }
    Ok(MaskedVec {
        item: input.item,
        iter: input.iter,
        owner,
        vec,
    })
}

/// Server-side modular sum of the masked vectors for one item. Requires
/// exactly one vector per expected participant, all for the same round.
pub fn aggregate(
    masked: &[MaskedVec],
    expected: &ParticipantSet,
    item: u32,
    iter: u32,
) -> Result<FixedVec, AggError> {
    let mismatch = |reason: String| AggError::ParticipantMismatch { item, reason };
    if masked.is_empty() || expected.is_empty() {
        return Err(mismatch("no contributions".into()));
    }
    let mut seen = Vec::with_capacity(masked.len());
    for mv in masked {
        if mv.item != item || mv.iter != iter {
            return Err(mismatch(format!(
                "vector from user {} tagged ({}, {}) instead of ({item}, {iter})",
                mv.owner, mv.item, mv.iter
            )));
        }
        if !expected.contains(mv.owner) {
            return Err(mismatch(format!("unexpected contributor {}", mv.owner)));
        }
        if seen.contains(&mv.owner) {
            return Err(mismatch(format!("duplicate contribution from {}", mv.owner)));
        }
        seen.push(mv.owner);
    }
    if seen.len() != expected.len() {
        let missing: Vec<u32> = expected
            .members()
            .iter()
            .copied()
            .filter(|u| !seen.contains(u))
            .collect();
        return Err(mismatch(format!("missing contributions from {missing:?}")));
    }
    let mut acc = FixedVec::zeros(masked[0].vec.len(), masked[0].vec.params());
    for mv in masked {
        acc = acc.add_mod(&mv.vec)?;
    }
    Ok(acc)
}

/// Hashes an input and commits to the serialized hash under fresh
/// randomness. Returns the hash, the commitment, and the decommit
/// randomness the committer keeps until the verification phase.
pub fn hash_and_commit(
    input: &AggInput,
    hasher: &dyn VectorHasher,
    rng: &mut impl RngCore,
) -> Result<(HashDigest, Commitment, [u8; RANDOMNESS_BYTES]), AggError> {
    let digest = hasher.hash_vec(&input.vec)?;
    let mut randomness = [0u8; RANDOMNESS_BYTES];
    rng.fill_bytes(&mut randomness);
    let commitment = commit(&digest.to_bytes(), &randomness);
    Ok((digest, commitment, randomness))
}

/// The aggregation-result equality test: `HF(v_agg)` must equal the product
/// of the participants' input hashes.
pub fn verify_aggregate(
    v_agg: &FixedVec,
    hashes: &[HashDigest],
    hasher: &dyn VectorHasher,
) -> Result<bool, AggError> {
    verify_aggregate_digest(v_agg, &HashDigest::product(hashes), hasher)
}

/// Variant taking the already-formed hash product; verifiers that
/// deduplicate repeated hashes build the product themselves.
pub fn verify_aggregate_digest(
    v_agg: &FixedVec,
    expected: &HashDigest,
    hasher: &dyn VectorHasher,
) -> Result<bool, AggError> {
    Ok(hasher.hash_vec(v_agg)? == *expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{key_agree, keygen, setup_group, KeyPair};
    use crate::seed::derive_rng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const B34: u64 = 1 << 34;

    fn params() -> FixedParams {
        FixedParams::new(10_000_000, B34, 16).unwrap()
    }

    /// Full pairwise key mesh for n test users.
    fn key_mesh(n: u32, salt: u64) -> Vec<BTreeMap<u32, SharedKey>> {
        let pairs: Vec<KeyPair> = (0..n)
            .map(|i| keygen(&mut derive_rng(salt, "test/agg-keys", i as u64)))
            .collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let ck =
                            key_agree(&pairs[i as usize], &pairs[j as usize].public_bytes())
                                .unwrap();
                        (j, ck)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn build_input_cases() {
        let p = params();
        // n_k = 1 with zero gradient passes the row through.
        let row = [1.5, -0.75];
        let input = build_input(&row, &[0.0, 0.0], 1, p, 0, 1).unwrap();
        assert_eq!(input.vec, FixedVec::encode(&row, p).unwrap());

        // zero row encodes the negated gradient.
        let input = build_input(&[0.0], &[0.25], 1, p, 0, 1).unwrap();
        assert_eq!(input.vec.decode()[0], -0.25);

        // hand value: 2.0/4 - 0.1 = 0.4 -> 4_000_000.
        let input = build_input(&[2.0], &[0.1], 4, p, 0, 1).unwrap();
        assert_eq!(input.vec.values(), &[4_000_000]);
    }

    #[test]
    fn participant_set_validation() {
        assert!(ParticipantSet::new(vec![0, 1, 4]).is_ok());
        assert!(ParticipantSet::new(vec![1, 0]).is_err());
        assert!(ParticipantSet::new(vec![2, 2]).is_err());
    }

    #[test]
    fn singleton_mask_is_identity() {
        let p = params();
        let set = ParticipantSet::new(vec![3]).unwrap();
        let input = build_input(&[0.5], &[0.1], 1, p, 7, 2).unwrap();
        let masked = mask(&input, 3, &set, &BTreeMap::new(), p).unwrap();
        assert_eq!(masked.vec, input.vec);
    }

    #[test]
    fn pair_masks_cancel() {
        let p = params();
        let keys = key_mesh(2, 11);
        let set = ParticipantSet::new(vec![0, 1]).unwrap();
        let a = build_input(&[1.0], &[0.2], 2, p, 0, 1).unwrap();
        let b = build_input(&[1.0], &[-0.1], 2, p, 0, 1).unwrap();
        let ma = mask(&a, 0, &set, &keys[0], p).unwrap();
        let mb = mask(&b, 1, &set, &keys[1], p).unwrap();
        assert_ne!(ma.vec, a.vec, "mask must actually blind the input");
        assert_eq!(
            ma.vec.add_mod(&mb.vec).unwrap(),
            a.vec.add_mod(&b.vec).unwrap()
        );
    }

    #[test]
    fn missing_key_is_reported() {
        let p = params();
        let set = ParticipantSet::new(vec![0, 1]).unwrap();
        let input = build_input(&[1.0], &[0.0], 2, p, 0, 1).unwrap();
        assert_eq!(
            mask(&input, 0, &set, &BTreeMap::new(), p),
            Err(AggError::MissingKey(1))
        );
    }

    #[test]
    fn three_party_cancellation_randomized() {
        let p = params();
        let keys = key_mesh(3, 12);
        let set = ParticipantSet::new(vec![0, 1, 2]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for trial in 0..100 {
            let inputs: Vec<AggInput> = (0..3)
                .map(|_| {
                    let vals: Vec<u64> = (0..4).map(|_| rng.random_range(0..B34)).collect();
                    AggInput {
                        item: 5,
                        iter: trial,
                        vec: FixedVec::from_residues(vals, p).unwrap(),
                    }
                })
                .collect();
            let masked: Vec<MaskedVec> = inputs
                .iter()
                .enumerate()
                .map(|(i, input)| mask(input, i as u32, &set, &keys[i], p).unwrap())
                .collect();
            let mut want = FixedVec::zeros(4, p);
            for input in &inputs {
                want = want.add_mod(&input.vec).unwrap();
            }
            let got = aggregate(&masked, &set, 5, trial).unwrap();
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn aggregate_validates_participants() {
        let p = params();
        let set = ParticipantSet::new(vec![0, 1]).unwrap();
        let mk = |owner: u32| MaskedVec {
            item: 0,
            iter: 1,
            owner,
            vec: FixedVec::zeros(1, p),
        };
        // single participant passes its vector through
        let solo = ParticipantSet::new(vec![4]).unwrap();
        let v = MaskedVec {
            owner: 4,
            ..mk(4)
        };
        assert_eq!(aggregate(std::slice::from_ref(&v), &solo, 0, 1).unwrap(), v.vec);

        assert!(matches!(
            aggregate(&[], &set, 0, 1),
            Err(AggError::ParticipantMismatch { .. })
        ));
        assert!(matches!(
            aggregate(&[mk(0), mk(0)], &set, 0, 1),
            Err(AggError::ParticipantMismatch { .. })
        ));
        assert!(matches!(
            aggregate(&[mk(0)], &set, 0, 1),
            Err(AggError::ParticipantMismatch { .. })
        ));
        assert!(matches!(
            aggregate(&[mk(0), mk(2)], &set, 0, 1),
            Err(AggError::ParticipantMismatch { .. })
        ));
        let wrong_iter = MaskedVec { iter: 9, ..mk(1) };
        assert!(matches!(
            aggregate(&[mk(0), wrong_iter], &set, 0, 1),
            Err(AggError::ParticipantMismatch { .. })
        ));
    }

    #[test]
    fn hash_commit_roundtrip() {
        let p = params();
        let gp = setup_group(2, b"agg");
        let mut rng = derive_rng(14, "test/agg", 0);
        let input = build_input(&[1.0, 2.0], &[0.1, -0.2], 2, p, 0, 1).unwrap();
        let (h, c, r) = hash_and_commit(&input, &gp, &mut rng).unwrap();
        assert!(crate::crypto::decommit(&h.to_bytes(), &c, &r));

        let other = build_input(&[1.0, 2.0], &[0.1, -0.3], 2, p, 0, 1).unwrap();
        let (h2, _, _) = hash_and_commit(&other, &gp, &mut rng).unwrap();
        assert_ne!(h.to_bytes(), h2.to_bytes());

        let zero = AggInput {
            item: 0,
            iter: 1,
            vec: FixedVec::zeros(2, p),
        };
        let (hz, cz, rz) = hash_and_commit(&zero, &gp, &mut rng).unwrap();
        assert_eq!(hz, HashDigest::identity());
        assert!(crate::crypto::decommit(&hz.to_bytes(), &cz, &rz));
    }

    #[test]
    fn honest_aggregate_verifies_and_tampered_fails() {
        let p = params();
        let gp = setup_group(3, b"agg-verify");
        let mut rng = derive_rng(15, "test/agg", 1);
        for n in [1usize, 2, 5] {
            let keys = key_mesh(n as u32, 20 + n as u64);
            let set = ParticipantSet::new((0..n as u32).collect()).unwrap();
            let inputs: Vec<AggInput> = (0..n)
                .map(|i| {
                    let row = [0.6, -0.8, 1.1];
                    let grad = [0.01 * i as f64, -0.02, 0.005];
                    build_input(&row, &grad, n as u32, p, 2, 3).unwrap()
                })
                .collect();
            let hashes: Vec<HashDigest> = inputs
                .iter()
                .map(|inp| hash_and_commit(inp, &gp, &mut rng).unwrap().0)
                .collect();
            let masked: Vec<MaskedVec> = inputs
                .iter()
                .enumerate()
                .map(|(i, inp)| mask(inp, i as u32, &set, &keys[i], p).unwrap())
                .collect();
            let agg = aggregate(&masked, &set, 2, 3).unwrap();
            assert!(verify_aggregate(&agg, &hashes, &gp).unwrap(), "n = {n}");

            // +1 on one element must break the equality.
            let mut vals = agg.values().to_vec();
            vals[0] = (vals[0] + 1) % B34;
            let tampered = FixedVec::from_residues(vals, p).unwrap();
            assert!(!verify_aggregate(&tampered, &hashes, &gp).unwrap());
        }
    }

    #[test]
    fn empty_hash_list_verifies_zero_aggregate() {
        let gp = setup_group(2, b"agg-empty");
        let zero = FixedVec::zeros(2, params());
        assert!(verify_aggregate(&zero, &[], &gp).unwrap());
    }
}
