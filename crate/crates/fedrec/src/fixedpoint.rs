//! Signed fixed-point encoding into the ring of residues mod `B`.
//!
//! Reals are scaled by `alpha`, rounded, and embedded two's-complement style
//! into `[0, B)`: non-negative values occupy `[0, B/2)`, negative values
//! `(B/2, B)`. Masking, aggregation, and homomorphic hashing all operate on
//! these residues; the embedding is chosen so that modular sums decode to
//! true signed sums as long as the aggregate magnitude stays below `B/2`
//! (see [`check_sum_bound`]).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FixedPointError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("value {value} does not fit: |value|*alpha must be < B/2 = {limit}")]
    Overflow { value: f64, limit: u64 },
    #[error("residue {residue} out of range [0, {modulus})")]
    ResidueOutOfRange { residue: u64, modulus: u64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error(
        "sum bound violated: n_k * bound * alpha = {lhs:.3e} must stay below B/2 = {rhs:.3e} \
         (margin {margin:.3e})"
    )]
    SumBoundViolation { lhs: f64, rhs: f64, margin: f64 },
}

/// Scaling and ring parameters shared by every encoded vector in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedParams {
    alpha: u64,
    modulus: u64,
    max_participants: u32,
}

impl FixedParams {
    /// `modulus` must be a power of two with room for signed values
    /// (`modulus >= 4 * alpha`) and small enough that residue sums cannot
    /// overflow a `u64`.
    pub fn new(alpha: u64, modulus: u64, max_participants: u32) -> Result<Self, FixedPointError> {
        if alpha == 0 {
            return Err(FixedPointError::InvalidParams("alpha must be >= 1".into()));
        }
        if !modulus.is_power_of_two() {
            return Err(FixedPointError::InvalidParams(format!(
                "modulus {modulus} is not a power of two"
            )));
        }
        if modulus > 1 << 62 {
            return Err(FixedPointError::InvalidParams(
                "modulus must be <= 2^62".into(),
            ));
        }
        if modulus < alpha.saturating_mul(4) {
            return Err(FixedPointError::InvalidParams(format!(
                "modulus {modulus} leaves no room for signed values at alpha {alpha}"
            )));
        }
        if max_participants == 0 {
            return Err(FixedPointError::InvalidParams(
                "max_participants must be >= 1".into(),
            ));
        }
        Ok(Self {
            alpha,
            modulus,
            max_participants,
        })
    }

    pub fn alpha(&self) -> u64 {
        self.alpha
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn max_participants(&self) -> u32 {
        self.max_participants
    }

    /// Bits needed to address the ring, `log2(B)`.
    pub fn bits(&self) -> u32 {
        self.modulus.trailing_zeros()
    }

    /// Bytes per residue on the wire, `ceil(log2(B) / 8)`.
    pub fn residue_bytes(&self) -> usize {
        self.bits().div_ceil(8) as usize
    }

    /// Encodes a real as a residue. Rounding is half-away-from-zero so that
    /// `encode(-x) = B - encode(x)` exactly.
    pub fn encode(&self, x: f64) -> Result<u64, FixedPointError> {
        let half = self.modulus / 2;
        let scaled = (x.abs() * self.alpha as f64).round();
        if !scaled.is_finite() || scaled >= half as f64 {
            return Err(FixedPointError::Overflow {
                value: x,
                limit: half,
            });
        }
        let magnitude = scaled as u64;
        if x < 0.0 && magnitude > 0 {
            Ok(self.modulus - magnitude)
        } else {
            Ok(magnitude)
        }
    }

    /// Decodes a residue back to a real: `[0, B/2)` maps to `+y/alpha`,
    /// `[B/2, B)` to `-(B-y)/alpha`.
    pub fn decode(&self, y: u64) -> f64 {
        debug_assert!(y < self.modulus, "residue out of range");
        self.to_signed(y) as f64 / self.alpha as f64
    }

    /// Two's-complement interpretation of a residue as a signed integer in
    /// `[-B/2, B/2)`.
    pub fn to_signed(&self, y: u64) -> i64 {
        if y < self.modulus / 2 {
            y as i64
        } else {
            -((self.modulus - y) as i64)
        }
    }
}

/// A `d`-dimensional vector of residues mod `B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedVec {
    values: Vec<u64>,
    params: FixedParams,
}

impl FixedVec {
    pub fn zeros(dim: usize, params: FixedParams) -> Self {
        Self {
            values: vec![0; dim],
            params,
        }
    }

    /// Validates raw residues (e.g. parsed off the wire) against the ring.
    pub fn from_residues(values: Vec<u64>, params: FixedParams) -> Result<Self, FixedPointError> {
        for &v in &values {
            if v >= params.modulus() {
                return Err(FixedPointError::ResidueOutOfRange {
                    residue: v,
                    modulus: params.modulus(),
                });
            }
        }
        Ok(Self { values, params })
    }

    pub fn encode(xs: &[f64], params: FixedParams) -> Result<Self, FixedPointError> {
        let values = xs
            .iter()
            .map(|&x| params.encode(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { values, params })
    }

    pub fn decode(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.params.decode(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn params(&self) -> FixedParams {
        self.params
    }

    /// Elementwise `(a + b) mod B`.
    pub fn add_mod(&self, other: &FixedVec) -> Result<FixedVec, FixedPointError> {
        if self.len() != other.len() || self.params != other.params {
            return Err(FixedPointError::DimensionMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        let modulus = self.params.modulus();
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a + b) % modulus)
            .collect();
        Ok(FixedVec {
            values,
            params: self.params,
        })
    }

    /// Adds `sign * term` to `self` in place, mod `B`.
    pub(crate) fn add_signed_in_place(&mut self, term: &FixedVec, positive: bool) {
        debug_assert_eq!(self.len(), term.len());
        let modulus = self.params.modulus();
        for (a, &m) in self.values.iter_mut().zip(&term.values) {
            *a = if positive {
                (*a + m) % modulus
            } else {
                (*a + modulus - m) % modulus
            };
        }
    }
}

/// Checks that `n_k` participant values of magnitude at most
/// `per_value_bound` cannot wrap the signed range: `n_k * bound * alpha`
/// must stay strictly below `B/2`. Run once at experiment start; when it
/// fails the runner shrinks `alpha` (or the caller raises `B`) rather than
/// risk honest aggregates failing verification.
pub fn check_sum_bound(
    params: FixedParams,
    per_value_bound: f64,
    n_k: u32,
) -> Result<(), FixedPointError> {
    let lhs = n_k as f64 * per_value_bound * params.alpha() as f64;
    let rhs = (params.modulus() / 2) as f64;
    if lhs < rhs {
        Ok(())
    } else {
        Err(FixedPointError::SumBoundViolation {
            lhs,
            rhs,
            margin: lhs - rhs,
        })
    }
}
