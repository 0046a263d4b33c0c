//! Verifiable, privacy-preserving federated matrix factorization.
//!
//! `fedrec` trains a low-rank recommender model between one server and many
//! user actors. Per-item gradient contributions are hidden from the server by
//! pairwise-cancelling masks, and every aggregation result the server
//! announces is checked by the users against homomorphically hashed,
//! committed inputs, so a tampering server is caught in the same iteration.
//!
//! The crate is organised around the lifecycle of one training run:
//!
//! * [`mf`] — plaintext matrix-factorization math (gradients, SGD updates,
//!   RMSE) and the exact-arithmetic federated round used as a correctness
//!   oracle.
//! * [`fixedpoint`] — signed fixed-point encoding into residues mod `B`, the
//!   integer domain everything cryptographic operates in.
//! * [`crypto`] — prime-order group (NIST P-256), homomorphic vector hash,
//!   hash commitments, Diffie-Hellman key agreement, the mask PRG, and the
//!   offline fixed-base precomputation tables.
//! * [`secure_agg`] — per-user input construction, pairwise masking, server
//!   aggregation, and the two user-side verification equalities.
//! * [`protocol`] — the four-phase user/server state machines, message
//!   schema, and training driver.
//! * [`transport`] — deterministic in-process message bus with byte
//!   accounting and adversarial fault-injection hooks.
//! * [`data`] — MovieLens-format ingestion, train/test splitting, and
//!   participant-list derivation.
//! * [`experiment`] — configurable experiment runner emitting timing,
//!   communication, and accuracy reports, plus a report comparator.
//!
//! Runnable walkthroughs of each capability live in `examples/`; the `fedrec`
//! binary exposes the experiment runner (`fedrec run`) and report comparator
//! (`fedrec compare`).

pub mod crypto;
pub mod data;
pub mod experiment;
pub mod fixedpoint;
pub mod mf;
pub mod protocol;
pub mod secure_agg;
pub mod transport;

mod seed;

pub use protocol::Mode;
