//! The four-phase protocol: actor state machines, message schema, and the
//! training driver.
//!
//! One iteration runs Phase 1 (local user update), Phase 2 (commit, mask,
//! aggregate), and Phase 3 (decommit, verify); Phase 0 (key exchange and
//! profile initialization) runs once up front. Actors exchange messages only
//! through the [`crate::transport::Bus`], and the driver advances them in
//! lockstep barriers: a phase step starts only after every message of the
//! previous step was delivered.

pub mod message;

mod actors;
mod run;

pub use actors::{RunConfig, ServerActor, UserActor};
pub use message::{AbortReason, ProtocolMessage, WireConfig};
pub use run::{
    run_initialization, run_iteration, run_training, transcript_bytes, Entity, FailureRecord,
    IterationError, IterationReport, Simulation, TimingRecord, TrainingRun, TrainingSetup,
};

use serde::Serialize;
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::fixedpoint::FixedPointError;
use crate::mf::MfError;
use crate::secure_agg::AggError;
use crate::transport::TransportError;
use message::{MsgKind, WireError};

/// Upload regime for the secure protocol, plus the plaintext oracle mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Users contribute masked gradients only for items they rated.
    PartText,
    /// Users contribute for every item, zero gradients for unrated ones.
    FullText,
    /// No cryptography: the exact-arithmetic federated baseline.
    Plaintext,
}

impl Mode {
    pub fn is_secure(&self) -> bool {
        !matches!(self, Mode::Plaintext)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::PartText => f.write_str("parttext"),
            Mode::FullText => f.write_str("fulltext"),
            Mode::Plaintext => f.write_str("plaintext"),
        }
    }
}

/// Which verification equality failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckKind {
    CommitmentCheck,
    AggregateCheck,
}

/// A user's ⊥ output: the failing item and equality test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationFailure {
    pub user: u32,
    pub item: u32,
    pub check: CheckKind,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("wire format: {0}")]
    Wire(#[from] WireError),
    #[error("aggregation: {0}")]
    Agg(#[from] AggError),
    #[error("crypto: {0}")]
    Crypto(#[from] CryptoError),
    #[error("fixed point: {0}")]
    FixedPoint(#[from] FixedPointError),
    #[error("matrix factorization: {0}")]
    Mf(#[from] MfError),
    #[error("duplicate registration for user {0}")]
    DuplicateUser(u32),
    #[error("{actor} rejected out-of-phase {kind:?} while in {state}")]
    OutOfPhase {
        actor: String,
        kind: MsgKind,
        state: String,
    },
    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),
    #[error("protocol state violated: {0}")]
    InvalidState(String),
}
