//! Wire message schema and canonical serialization.
//!
//! Every message starts with a fixed little-endian header
//! `{msg_type: 1 byte, sender: 4, iter: 4, item: 4}` followed by a
//! per-kind payload: group elements in 33-byte compressed form, commitments
//! and randomness as 32 bytes, residues packed in `ceil(log2(B)/8)` bytes.
//! The byte counts in the communication report are exactly the lengths of
//! these encodings.

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{COMMITMENT_BYTES, POINT_BYTES, RANDOMNESS_BYTES};

pub const HEADER_BYTES: usize = 13;
/// Sentinel sender id for the server, and sentinel for "no item".
pub const SERVER_SENDER: u32 = u32::MAX;
pub const NO_ITEM: u32 = u32::MAX;

/// Residue packing parameters shared by both ends of the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireConfig {
    pub residue_bytes: usize,
    pub modulus: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("message truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("payload length {len} inconsistent for {kind:?}")]
    BadLength { kind: MsgKind, len: usize },
    #[error("unknown abort reason code {0}")]
    UnknownReason(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Direction {
    UserToServer,
    ServerToUser,
}

/// Accounting cell for the communication tables: protocol phase, step
/// within the phase, and transfer direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CommCell {
    pub phase: u8,
    pub step: u8,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum MsgKind {
    PubKey,
    ItemMatrixBroadcast,
    ParticipantLists,
    CommitMsg,
    MaskedMsg,
    AggregateBroadcast,
    DecommitMsg,
    Abort,
}

/// Why a user output ⊥ or the run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AbortReason {
    InvalidPublicKey,
    CommitmentCheck,
    AggregateCheck,
    Protocol,
}

impl AbortReason {
    fn code(self) -> u8 {
        match self {
            AbortReason::InvalidPublicKey => 0,
            AbortReason::CommitmentCheck => 1,
            AbortReason::AggregateCheck => 2,
            AbortReason::Protocol => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0 => AbortReason::InvalidPublicKey,
            1 => AbortReason::CommitmentCheck,
            2 => AbortReason::AggregateCheck,
            3 => AbortReason::Protocol,
            other => return Err(WireError::UnknownReason(other)),
        })
    }
}

/// Every message that crosses the bus.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    /// Phase 0: a user's public key, relayed by the server to the others.
    PubKey {
        user: u32,
        key: [u8; POINT_BYTES],
    },
    /// Phase 1 (iteration 1 only): the initial encoded item matrix.
    ItemMatrixBroadcast {
        iter: u32,
        items: u32,
        dim: u32,
        values: Vec<u64>,
    },
    /// Phase 1: per-item participant sets for this iteration.
    ParticipantLists {
        iter: u32,
        lists: Vec<(u32, Vec<u32>)>,
    },
    /// Phase 2 step 0: commitment to the hashed aggregation input.
    CommitMsg {
        user: u32,
        item: u32,
        iter: u32,
        commitment: [u8; COMMITMENT_BYTES],
    },
    /// Phase 2 step 1: masked input vector.
    MaskedMsg {
        user: u32,
        item: u32,
        iter: u32,
        values: Vec<u64>,
    },
    /// Phase 2 step 2: the server's aggregation result for one item.
    AggregateBroadcast {
        item: u32,
        iter: u32,
        values: Vec<u64>,
    },
    /// Phase 3 step 0: decommit string (input hash and randomness).
    DecommitMsg {
        user: u32,
        item: u32,
        iter: u32,
        hash_bytes: [u8; POINT_BYTES],
        randomness: [u8; RANDOMNESS_BYTES],
    },
    /// A user's ⊥ output.
    Abort {
        user: u32,
        iter: u32,
        reason: AbortReason,
    },
}

impl ProtocolMessage {
    pub fn kind(&self) -> MsgKind {
        match self {
            ProtocolMessage::PubKey { .. } => MsgKind::PubKey,
            ProtocolMessage::ItemMatrixBroadcast { .. } => MsgKind::ItemMatrixBroadcast,
            ProtocolMessage::ParticipantLists { .. } => MsgKind::ParticipantLists,
            ProtocolMessage::CommitMsg { .. } => MsgKind::CommitMsg,
            ProtocolMessage::MaskedMsg { .. } => MsgKind::MaskedMsg,
            ProtocolMessage::AggregateBroadcast { .. } => MsgKind::AggregateBroadcast,
            ProtocolMessage::DecommitMsg { .. } => MsgKind::DecommitMsg,
            ProtocolMessage::Abort { .. } => MsgKind::Abort,
        }
    }

    /// Protocol phase this message belongs to (0..=3).
    pub fn phase(&self) -> u8 {
        match self.kind() {
            MsgKind::PubKey => 0,
            MsgKind::ItemMatrixBroadcast | MsgKind::ParticipantLists => 1,
            MsgKind::CommitMsg | MsgKind::MaskedMsg | MsgKind::AggregateBroadcast => 2,
            MsgKind::DecommitMsg | MsgKind::Abort => 3,
        }
    }

    /// Step within the phase, mirroring the per-step accounting columns.
    pub fn step(&self) -> u8 {
        match self.kind() {
            MsgKind::PubKey | MsgKind::ItemMatrixBroadcast | MsgKind::ParticipantLists => 0,
            MsgKind::CommitMsg | MsgKind::DecommitMsg => 0,
            MsgKind::MaskedMsg => 1,
            MsgKind::AggregateBroadcast => 2,
            MsgKind::Abort => 2,
        }
    }

    /// The actor the message originates from: the authoring user for user
    /// messages (also when relayed), the server sentinel otherwise.
    pub fn originator(&self) -> u32 {
        match self {
            ProtocolMessage::PubKey { user, .. }
            | ProtocolMessage::CommitMsg { user, .. }
            | ProtocolMessage::MaskedMsg { user, .. }
            | ProtocolMessage::DecommitMsg { user, .. }
            | ProtocolMessage::Abort { user, .. } => *user,
            _ => SERVER_SENDER,
        }
    }

    fn header_iter(&self) -> u32 {
        match self {
            ProtocolMessage::PubKey { .. } => 0,
            ProtocolMessage::ItemMatrixBroadcast { iter, .. }
            | ProtocolMessage::ParticipantLists { iter, .. }
            | ProtocolMessage::CommitMsg { iter, .. }
            | ProtocolMessage::MaskedMsg { iter, .. }
            | ProtocolMessage::AggregateBroadcast { iter, .. }
            | ProtocolMessage::DecommitMsg { iter, .. }
            | ProtocolMessage::Abort { iter, .. } => *iter,
        }
    }

    fn header_item(&self) -> u32 {
        match self {
            ProtocolMessage::CommitMsg { item, .. }
            | ProtocolMessage::MaskedMsg { item, .. }
            | ProtocolMessage::AggregateBroadcast { item, .. }
            | ProtocolMessage::DecommitMsg { item, .. } => *item,
            _ => NO_ITEM,
        }
    }

    fn tag(&self) -> u8 {
        match self.kind() {
            MsgKind::PubKey => 0,
            MsgKind::ItemMatrixBroadcast => 1,
            MsgKind::ParticipantLists => 2,
            MsgKind::CommitMsg => 3,
            MsgKind::MaskedMsg => 4,
            MsgKind::AggregateBroadcast => 5,
            MsgKind::DecommitMsg => 6,
            MsgKind::Abort => 7,
        }
    }

    /// Serialized size; always equals `to_bytes().len()`.
    pub fn wire_size(&self, wire: &WireConfig) -> usize {
        HEADER_BYTES
            + match self {
                ProtocolMessage::PubKey { .. } => POINT_BYTES,
                ProtocolMessage::ItemMatrixBroadcast { values, .. } => {
                    8 + values.len() * wire.residue_bytes
                }
                ProtocolMessage::ParticipantLists { lists, .. } => {
                    4 + lists
                        .iter()
                        .map(|(_, users)| 8 + 4 * users.len())
                        .sum::<usize>()
                }
                ProtocolMessage::CommitMsg { .. } => COMMITMENT_BYTES,
                ProtocolMessage::MaskedMsg { values, .. }
                | ProtocolMessage::AggregateBroadcast { values, .. } => {
                    values.len() * wire.residue_bytes
                }
                ProtocolMessage::DecommitMsg { .. } => POINT_BYTES + RANDOMNESS_BYTES,
                ProtocolMessage::Abort { .. } => 1,
            }
    }

    pub fn to_bytes(&self, wire: &WireConfig) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.wire_size(wire));
        buf.push(self.tag());
        buf.extend_from_slice(&self.originator().to_le_bytes());
        buf.extend_from_slice(&self.header_iter().to_le_bytes());
        buf.extend_from_slice(&self.header_item().to_le_bytes());
        match self {
            ProtocolMessage::PubKey { key, .. } => buf.extend_from_slice(key),
            ProtocolMessage::ItemMatrixBroadcast {
                items, dim, values, ..
            } => {
                buf.extend_from_slice(&items.to_le_bytes());
                buf.extend_from_slice(&dim.to_le_bytes());
                for &v in values {
                    pack_residue(&mut buf, v, wire.residue_bytes);
                }
            }
            ProtocolMessage::ParticipantLists { lists, .. } => {
                buf.extend_from_slice(&(lists.len() as u32).to_le_bytes());
                for (item, users) in lists {
                    buf.extend_from_slice(&item.to_le_bytes());
                    buf.extend_from_slice(&(users.len() as u32).to_le_bytes());
                    for u in users {
                        buf.extend_from_slice(&u.to_le_bytes());
                    }
                }
            }
            ProtocolMessage::CommitMsg { commitment, .. } => buf.extend_from_slice(commitment),
            ProtocolMessage::MaskedMsg { values, .. }
            | ProtocolMessage::AggregateBroadcast { values, .. } => {
                for &v in values {
                    pack_residue(&mut buf, v, wire.residue_bytes);
                }
            }
            ProtocolMessage::DecommitMsg {
                hash_bytes,
                randomness,
                ..
            } => {
                buf.extend_from_slice(hash_bytes);
                buf.extend_from_slice(randomness);
            }
            ProtocolMessage::Abort { reason, .. } => buf.push(reason.code()),
        }
        debug_assert_eq!(buf.len(), self.wire_size(wire));
        buf
    }

    pub fn from_bytes(bytes: &[u8], wire: &WireConfig) -> Result<Self, WireError> {
        let mut reader = Reader { bytes, pos: 0 };
        let tag = reader.u8()?;
        let sender = reader.u32()?;
        let iter = reader.u32()?;
        let item = reader.u32()?;
        let msg = match tag {
            0 => ProtocolMessage::PubKey {
                user: sender,
                key: reader.array::<POINT_BYTES>()?,
            },
            1 => {
                let items = reader.u32()?;
                let dim = reader.u32()?;
                let count = items as usize * dim as usize;
                let mut values = Vec::with_capacity(count);
                for _ in 0..count {
                    values.push(reader.residue(wire.residue_bytes)?);
                }
                ProtocolMessage::ItemMatrixBroadcast {
                    iter,
                    items,
                    dim,
                    values,
                }
            }
            2 => {
                let count = reader.u32()?;
                let mut lists = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let item = reader.u32()?;
                    let len = reader.u32()?;
                    let mut users = Vec::with_capacity(len as usize);
                    for _ in 0..len {
                        users.push(reader.u32()?);
                    }
                    lists.push((item, users));
                }
                ProtocolMessage::ParticipantLists { iter, lists }
            }
            3 => ProtocolMessage::CommitMsg {
                user: sender,
                item,
                iter,
                commitment: reader.array::<COMMITMENT_BYTES>()?,
            },
            4 | 5 => {
                let remaining = bytes.len() - reader.pos;
                if !remaining.is_multiple_of(wire.residue_bytes) {
                    return Err(WireError::BadLength {
                        kind: if tag == 4 {
                            MsgKind::MaskedMsg
                        } else {
                            MsgKind::AggregateBroadcast
                        },
                        len: remaining,
                    });
                }
                let count = remaining / wire.residue_bytes;
                let mut values = Vec::with_capacity(count);
                for _ in 0..count {
                    values.push(reader.residue(wire.residue_bytes)?);
                }
                if tag == 4 {
                    ProtocolMessage::MaskedMsg {
                        user: sender,
                        item,
                        iter,
                        values,
                    }
                } else {
                    ProtocolMessage::AggregateBroadcast { item, iter, values }
                }
            }
            6 => ProtocolMessage::DecommitMsg {
                user: sender,
                item,
                iter,
                hash_bytes: reader.array::<POINT_BYTES>()?,
                randomness: reader.array::<RANDOMNESS_BYTES>()?,
            },
            7 => ProtocolMessage::Abort {
                user: sender,
                iter,
                reason: AbortReason::from_code(reader.u8()?)?,
            },
            other => return Err(WireError::UnknownTag(other)),
        };
        if reader.pos != bytes.len() {
            return Err(WireError::BadLength {
                kind: msg.kind(),
                len: bytes.len(),
            });
        }
        Ok(msg)
    }
}

fn pack_residue(buf: &mut Vec<u8>, value: u64, residue_bytes: usize) {
    buf.extend_from_slice(&value.to_le_bytes()[..residue_bytes]);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn residue(&mut self, residue_bytes: usize) -> Result<u64, WireError> {
        let slice = self.take(residue_bytes)?;
        let mut bytes = [0u8; 8];
        bytes[..residue_bytes].copy_from_slice(slice);
        Ok(u64::from_le_bytes(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wire() -> WireConfig {
        WireConfig {
            residue_bytes: 5,
            modulus: 1 << 34,
        }
    }

    #[test]
    fn masked_msg_size_is_header_plus_packed_residues() {
        let msg = ProtocolMessage::MaskedMsg {
            user: 2,
            item: 3,
            iter: 4,
            values: vec![0; 16],
        };
        assert_eq!(msg.wire_size(&wire()), HEADER_BYTES + 16 * 5);
        assert_eq!(msg.to_bytes(&wire()).len(), HEADER_BYTES + 16 * 5);
    }

    #[test]
    fn commit_msg_size_is_header_plus_digest() {
        let msg = ProtocolMessage::CommitMsg {
            user: 0,
            item: 0,
            iter: 1,
            commitment: [0xab; COMMITMENT_BYTES],
        };
        assert_eq!(msg.wire_size(&wire()), HEADER_BYTES + 32);
    }

    #[test]
    fn truncated_and_bad_tag_rejected() {
        let msg = ProtocolMessage::Abort {
            user: 1,
            iter: 2,
            reason: AbortReason::AggregateCheck,
        };
        let bytes = msg.to_bytes(&wire());
        assert_eq!(
            ProtocolMessage::from_bytes(&bytes[..bytes.len() - 1], &wire()),
            Err(WireError::Truncated(HEADER_BYTES))
        );
        let mut bad = bytes.clone();
        bad[0] = 99;
        assert_eq!(
            ProtocolMessage::from_bytes(&bad, &wire()),
            Err(WireError::UnknownTag(99))
        );
    }

    fn arb_message() -> impl Strategy<Value = ProtocolMessage> {
        let residues = prop::collection::vec(0u64..(1 << 34), 0..6);
        prop_oneof![
            (any::<u32>(), any::<[u8; POINT_BYTES]>())
                .prop_map(|(user, key)| ProtocolMessage::PubKey { user, key }),
            (0u32..4, 0u32..3, residues.clone()).prop_map(|(items, _, values)| {
                let dim = (values.len() as u32).checked_div(items).unwrap_or(0);
                let values = values[..(items * dim) as usize].to_vec();
                ProtocolMessage::ItemMatrixBroadcast {
                    iter: 1,
                    items,
                    dim,
                    values,
                }
            }),
            prop::collection::vec((any::<u32>(), prop::collection::vec(any::<u32>(), 0..5)), 0..4)
                .prop_map(|lists| ProtocolMessage::ParticipantLists { iter: 2, lists }),
            (any::<u32>(), any::<u32>(), any::<u32>(), any::<[u8; 32]>()).prop_map(
                |(user, item, iter, commitment)| ProtocolMessage::CommitMsg {
                    user,
                    item,
                    iter,
                    commitment,
                }
            ),
            (any::<u32>(), any::<u32>(), any::<u32>(), residues.clone()).prop_map(
                |(user, item, iter, values)| ProtocolMessage::MaskedMsg {
                    user,
                    item,
                    iter,
                    values,
                }
            ),
            (any::<u32>(), any::<u32>(), residues).prop_map(|(item, iter, values)| {
                ProtocolMessage::AggregateBroadcast { item, iter, values }
            }),
            (
                any::<u32>(),
                any::<u32>(),
                any::<u32>(),
                any::<[u8; POINT_BYTES]>(),
                any::<[u8; RANDOMNESS_BYTES]>()
            )
                .prop_map(|(user, item, iter, hash_bytes, randomness)| {
                    ProtocolMessage::DecommitMsg {
                        user,
                        item,
                        iter,
                        hash_bytes,
                        randomness,
                    }
                }),
            (any::<u32>(), any::<u32>(), 0u8..4).prop_map(|(user, iter, code)| {
                ProtocolMessage::Abort {
                    user,
                    iter,
                    reason: AbortReason::from_code(code).unwrap(),
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip_and_size_agree(msg in arb_message()) {
            let w = wire();
            let bytes = msg.to_bytes(&w);
            prop_assert_eq!(bytes.len(), msg.wire_size(&w));
            let back = ProtocolMessage::from_bytes(&bytes, &w).unwrap();
            prop_assert_eq!(back, msg);
        }
    }
}
