//! Homomorphic vector hash and its offline fixed-base acceleration.
//!
//! `HF(x) = prod_l g_l^{e_l}` where `e_l` is the signed two's-complement
//! interpretation of residue `x[l]`, reduced into the scalar field. Hashing
//! the *signed* value rather than the raw residue is what makes verification
//! commute with signed sums: as long as the true integer sum stays below
//! `B/2` in magnitude (the sum-bound guard), the decoded aggregate's signed
//! value equals the sum of the signed inputs and the exponent equality holds
//! exactly, even when the masked residues wrapped mod `B` along the way.

use p256::elliptic_curve::group::Group;
use p256::{ProjectivePoint, Scalar};

use super::group::{point_from_bytes, point_to_bytes, GroupParams, POINT_BYTES};
use super::CryptoError;
use crate::fixedpoint::FixedVec;

/// A hash value: one element of the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashDigest(ProjectivePoint);

impl HashDigest {
    pub fn identity() -> Self {
        Self(ProjectivePoint::IDENTITY)
    }

    /// Group operation; in the multiplicative view this is the product of
    /// two hashes.
    pub fn combine(&self, other: &Self) -> Self {
        Self(self.0 + other.0)
    }

    /// Product of a collection of hashes.
    pub fn product<'a>(digests: impl IntoIterator<Item = &'a HashDigest>) -> Self {
        digests
            .into_iter()
            .fold(Self::identity(), |acc, d| acc.combine(d))
    }

    /// `self` taken `count` times (the hash of `count` identical inputs),
    /// by double-and-add over the small multiplier.
    pub fn mul_small(&self, count: u32) -> Self {
        if count == 0 {
            return Self::identity();
        }
        let mut acc = ProjectivePoint::IDENTITY;
        for shift in (0..=31 - count.leading_zeros()).rev() {
            acc = acc.double();
            if (count >> shift) & 1 == 1 {
                acc += self.0;
            }
        }
        Self(acc)
    }

    pub fn to_bytes(&self) -> [u8; POINT_BYTES] {
        point_to_bytes(&self.0)
    }

    pub fn from_bytes(bytes: &[u8; POINT_BYTES]) -> Option<Self> {
        point_from_bytes(bytes).map(Self)
    }
}

/// Signed exponent of one residue as a scalar, with its magnitude for the
/// windowed path.
fn signed_exponent(vec: &FixedVec, index: usize) -> (u64, bool) {
    let signed = vec.params().to_signed(vec.values()[index]);
    (signed.unsigned_abs(), signed < 0)
}

/// Plain homomorphic hash: one scalar multiplication per nonzero element.
pub fn hf(x: &FixedVec, gp: &GroupParams) -> Result<HashDigest, CryptoError> {
    if x.len() != gp.dim() {
        return Err(CryptoError::DimensionMismatch {
            got: x.len(),
            expected: gp.dim(),
        });
    }
    let mut acc = ProjectivePoint::IDENTITY;
    for l in 0..x.len() {
        let (magnitude, negative) = signed_exponent(x, l);
        if magnitude == 0 {
            continue;
        }
        let term = *gp.generator(l) * Scalar::from(magnitude);
        acc += if negative { -term } else { term };
    }
    Ok(HashDigest(acc))
}

/// Offline tables for fixed-base evaluation of [`hf`].
///
/// For every generator `g_l` and window `j`, the table stores
/// `g_l^(2^(w*j) * v)` for all digits `v < 2^w`, so hashing becomes one
/// table lookup and point addition per nonzero window of each exponent's
/// magnitude. Table memory grows as `dim * ceil(64/w) * 2^w` points.
pub struct PrecompTable {
    window_bits: u32,
    windows: usize,
    tables: Vec<Vec<Vec<ProjectivePoint>>>,
}

impl PrecompTable {
    pub fn dim(&self) -> usize {
        self.tables.len()
    }

    pub fn window_bits(&self) -> u32 {
        self.window_bits
    }
}

/// Builds the per-generator windowed tables. `window_bits` must lie in
/// `[1, 16]`; 8 is a good default for 34-bit residues.
pub fn precompute_fixed_base(
    gp: &GroupParams,
    window_bits: u32,
) -> Result<PrecompTable, CryptoError> {
    if !(1..=16).contains(&window_bits) {
        return Err(CryptoError::InvalidWindowBits(window_bits));
    }
    let windows = 64usize.div_ceil(window_bits as usize);
    let entries = 1usize << window_bits;
    let tables = (0..gp.dim())
        .map(|l| {
            let mut base = *gp.generator(l);
            let mut per_window = Vec::with_capacity(windows);
            for _ in 0..windows {
                let mut row = Vec::with_capacity(entries);
                row.push(ProjectivePoint::IDENTITY);
                for v in 1..entries {
                    row.push(row[v - 1] + base);
                }
                per_window.push(row);
                for _ in 0..window_bits {
                    base = base.double();
                }
            }
            per_window
        })
        .collect();
    Ok(PrecompTable {
        window_bits,
        windows,
        tables,
    })
}

/// Table-driven evaluation; agrees with [`hf`] exactly for every input.
pub fn hf_precomputed(x: &FixedVec, table: &PrecompTable) -> Result<HashDigest, CryptoError> {
    if x.len() != table.dim() {
        return Err(CryptoError::DimensionMismatch {
            got: x.len(),
            expected: table.dim(),
        });
    }
    let mask = (1u64 << table.window_bits) - 1;
    let mut acc = ProjectivePoint::IDENTITY;
    for l in 0..x.len() {
        let (mut magnitude, negative) = signed_exponent(x, l);
        let mut window = 0;
        while magnitude != 0 {
            debug_assert!(window < table.windows);
            let digit = (magnitude & mask) as usize;
            if digit != 0 {
                let term = table.tables[l][window][digit];
                acc += if negative { -term } else { term };
            }
            magnitude >>= table.window_bits;
            window += 1;
        }
    }
    Ok(HashDigest(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::setup_group;
    use crate::fixedpoint::FixedParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const B34: u64 = 1 << 34;

    fn params() -> FixedParams {
        FixedParams::new(10_000_000, B34, 16).unwrap()
    }

    fn residues(values: Vec<u64>) -> FixedVec {
        FixedVec::from_residues(values, params()).unwrap()
    }

    #[test]
    fn zero_vector_hashes_to_identity() {
        let gp = setup_group(4, b"hf");
        let x = FixedVec::zeros(4, params());
        assert_eq!(hf(&x, &gp).unwrap(), HashDigest::identity());
    }

    #[test]
    fn unit_vector_hashes_to_first_generator() {
        let gp = setup_group(3, b"hf");
        let x = residues(vec![1, 0, 0]);
        assert_eq!(hf(&x, &gp).unwrap().0, *gp.generator(0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let gp = setup_group(3, b"hf");
        let x = FixedVec::zeros(2, params());
        assert!(matches!(
            hf(&x, &gp),
            Err(CryptoError::DimensionMismatch { .. })
        ));
    }

    /// Signed integer sum oracle: the hash of two encodings multiplied
    /// together must equal the hash of the encoded signed sum.
    #[test]
    fn homomorphism_against_integer_sum_oracle() {
        let gp = setup_group(3, b"hf-homo");
        let p = params();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a: Vec<i64> = (0..3).map(|_| rng.random_range(-1_000_000..1_000_000)).collect();
            let b: Vec<i64> = (0..3).map(|_| rng.random_range(-1_000_000..1_000_000)).collect();
            let enc = |s: &[i64]| {
                residues(
                    s.iter()
                        .map(|&v| if v >= 0 { v as u64 } else { B34 - v.unsigned_abs() })
                        .collect(),
                )
            };
            let sum: Vec<i64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ha = hf(&enc(&a), &gp).unwrap();
            let hb = hf(&enc(&b), &gp).unwrap();
            let hsum = hf(&enc(&sum), &gp).unwrap();
            assert_eq!(ha.combine(&hb), hsum);
        }
        // Modular addition of the encodings gives the same digest as the
        // signed sum while magnitudes stay below B/2.
        let a = FixedVec::encode(&[1.5, -2.25, 0.75], p).unwrap();
        let b = FixedVec::encode(&[-0.5, 1.25, 0.25], p).unwrap();
        let ha = hf(&a, &gp).unwrap();
        let hb = hf(&b, &gp).unwrap();
        assert_eq!(ha.combine(&hb), hf(&a.add_mod(&b).unwrap(), &gp).unwrap());
    }

    #[test]
    fn single_element_perturbation_changes_digest() {
        let gp = setup_group(4, b"hf-perturb");
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..50 {
            let vals: Vec<u64> = (0..4).map(|_| rng.random_range(0..B34)).collect();
            let base = hf(&residues(vals.clone()), &gp).unwrap();
            let idx = rng.random_range(0..4);
            let mut tweaked = vals.clone();
            tweaked[idx] = (tweaked[idx] + rng.random_range(1..1000)) % B34;
            assert_ne!(hf(&residues(tweaked), &gp).unwrap(), base);
        }
    }

    #[test]
    fn precomputed_agrees_with_plain_hf() {
        let gp = setup_group(5, b"hf-table");
        let table = precompute_fixed_base(&gp, 8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..100 {
            let vals: Vec<u64> = (0..5).map(|_| rng.random_range(0..B34)).collect();
            let x = residues(vals);
            assert_eq!(hf_precomputed(&x, &table).unwrap(), hf(&x, &gp).unwrap());
        }
        let zero = FixedVec::zeros(5, params());
        assert_eq!(
            hf_precomputed(&zero, &table).unwrap(),
            HashDigest::identity()
        );
    }

    #[test]
    fn table_build_is_deterministic() {
        let gp = setup_group(2, b"hf-det");
        let t1 = precompute_fixed_base(&gp, 4).unwrap();
        let t2 = precompute_fixed_base(&gp, 4).unwrap();
        assert_eq!(t1.tables, t2.tables);
        assert!(matches!(
            precompute_fixed_base(&gp, 0),
            Err(CryptoError::InvalidWindowBits(0))
        ));
        assert!(matches!(
            precompute_fixed_base(&gp, 17),
            Err(CryptoError::InvalidWindowBits(17))
        ));
    }

    #[test]
    fn mul_small_matches_repeated_product() {
        let gp = setup_group(1, b"hf-mul");
        let h = hf(&residues(vec![12345]), &gp).unwrap();
        for count in [0u32, 1, 2, 3, 7, 64, 87, 255] {
            let repeated = HashDigest::product(std::iter::repeat_n(&h, count as usize));
            assert_eq!(h.mul_small(count), repeated, "count {count}");
        }
    }

    #[test]
    fn digest_serialization_roundtrip() {
        let gp = setup_group(2, b"hf-ser");
        let x = residues(vec![42, B34 - 17]);
        let digest = hf(&x, &gp).unwrap();
        let bytes = digest.to_bytes();
        assert_eq!(HashDigest::from_bytes(&bytes).unwrap(), digest);

        let id = HashDigest::identity();
        assert_eq!(HashDigest::from_bytes(&id.to_bytes()).unwrap(), id);
    }
}
