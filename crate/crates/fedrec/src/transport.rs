//! Deterministic in-process message bus with byte accounting and
//! adversarial fault injection.
//!
//! Actors never share state; every exchange goes through [`Bus::send`] and
//! [`Bus::deliver_all`]. The bus counts serialized bytes per
//! `(phase, step, direction)` cell, keeps an ordered transcript for the
//! communication report, and hosts the tamper hook that implements the
//! configured [`AdversaryMode`]. All adversarial behavior in a run lives
//! here: the server actor itself always runs the honest algorithm.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::protocol::message::{CommCell, Direction, MsgKind, ProtocolMessage, WireConfig};

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("unknown recipient {0:?}")]
    UnknownRecipient(Recipient),
    #[error("sender {0:?} is not registered")]
    UnknownSender(ActorId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ActorId {
    User(u32),
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Actor(ActorId),
    /// Every registered user.
    AllUsers,
    /// Every registered user except one (relay of a user's own message).
    OtherUsers(u32),
}

/// Delivery order within a phase. Barrier semantics make correctness
/// order-independent; the seeded shuffle exists to prove that in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOrder {
    Fifo,
    Shuffled { seed: u64 },
}

/// A configured server misbehavior, applied by the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryMode {
    Honest,
    /// Add `delta` (mod B) to one residue of the aggregate broadcast for
    /// `item`.
    TamperAggregate { item: u32, dim: u32, delta: u64 },
    /// Flip one bit of the relayed decommit randomness originating from
    /// `user` for `item`.
    TamperDecommit { user: u32, item: u32 },
    /// Silently discard messages of `kind` sent by `user` (the adversarial
    /// server ignoring input on its receive path).
    DropMessage { kind: MsgKind, user: u32 },
    /// Replace `user`'s masked vector for `item` with the one it sent in
    /// the previous iteration.
    ReplayMaskedVec { user: u32, item: u32 },
}

impl AdversaryMode {
    pub fn is_honest(&self) -> bool {
        matches!(self, AdversaryMode::Honest)
    }
}

/// What the tamper hook did to a message in flight.
pub enum TamperAction {
    Forward(ProtocolMessage),
    Drop,
}

pub type TamperHook = Box<dyn FnMut(&ActorId, &Recipient, ProtocolMessage) -> TamperAction>;

/// One sent message as recorded for the communication report.
#[derive(Debug, Clone)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub from: ActorId,
    pub kind: MsgKind,
    pub cell: CommCell,
    /// Serialized size of one copy.
    pub bytes: usize,
    /// Number of delivered copies (fan-out of a broadcast).
    pub copies: u32,
    /// Retained payload for re-serialization checks, when enabled.
    pub payload: Option<Arc<ProtocolMessage>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommCounter {
    pub bytes: u64,
    pub messages: u64,
}

struct Pending {
    recipient: ActorId,
    message: Arc<ProtocolMessage>,
}

/// The shared medium connecting one server and `n` user actors.
pub struct Bus {
    wire: WireConfig,
    users: Vec<u32>,
    server_registered: bool,
    order: DeliveryOrder,
    queue: Vec<Pending>,
    counters: BTreeMap<CommCell, CommCounter>,
    transcript: Vec<TranscriptEntry>,
    record_payloads: bool,
    tamper: Option<TamperHook>,
    delivered_bytes: u64,
    seq: u64,
    drains: u64,
}

impl Bus {
    pub fn new(wire: WireConfig, order: DeliveryOrder) -> Self {
        Self {
            wire,
            users: Vec::new(),
            server_registered: false,
            order,
            queue: Vec::new(),
            counters: BTreeMap::new(),
            transcript: Vec::new(),
            record_payloads: false,
            tamper: None,
            delivered_bytes: 0,
            seq: 0,
            drains: 0,
        }
    }

    pub fn register_user(&mut self, id: u32) {
        debug_assert!(!self.users.contains(&id));
        self.users.push(id);
        self.users.sort_unstable();
    }

    pub fn register_server(&mut self) {
        self.server_registered = true;
    }

    /// Keep full payloads in the transcript so tests can re-serialize every
    /// message. Costs memory proportional to the whole run.
    pub fn set_record_payloads(&mut self, record: bool) {
        self.record_payloads = record;
    }

    /// Installs the standard fault behavior for `mode`.
    pub fn install_tamper(&mut self, mode: AdversaryMode) {
        match mode {
            AdversaryMode::Honest => self.tamper = None,
            _ => self.install_tamper_fn(standard_hook(mode, self.wire)),
        }
    }

    /// Installs an arbitrary hook; tests use this for exhaustive bit-flip
    /// sweeps beyond the named modes.
    pub fn install_tamper_fn(&mut self, hook: TamperHook) {
        self.tamper = Some(hook);
    }

    fn resolve(&self, to: &Recipient) -> Result<Vec<ActorId>, TransportError> {
        let known_user = |u: u32| self.users.binary_search(&u).is_ok();
        match *to {
            Recipient::Actor(ActorId::Server) if self.server_registered => {
                Ok(vec![ActorId::Server])
            }
            Recipient::Actor(ActorId::User(u)) if known_user(u) => Ok(vec![ActorId::User(u)]),
            Recipient::Actor(_) => Err(TransportError::UnknownRecipient(*to)),
            Recipient::AllUsers => Ok(self.users.iter().map(|&u| ActorId::User(u)).collect()),
            Recipient::OtherUsers(except) => {
                if !known_user(except) {
                    return Err(TransportError::UnknownRecipient(*to));
                }
                Ok(self
                    .users
                    .iter()
                    .filter(|&&u| u != except)
                    .map(|&u| ActorId::User(u))
                    .collect())
            }
        }
    }

    /// Queues a message. The serialized size of what the sender put on the
    /// wire is counted immediately, once per delivered copy.
    pub fn send(
        &mut self,
        from: ActorId,
        to: Recipient,
        message: ProtocolMessage,
    ) -> Result<(), TransportError> {
        match from {
            ActorId::Server if !self.server_registered => {
                return Err(TransportError::UnknownSender(from))
            }
            ActorId::User(u) if self.users.binary_search(&u).is_err() => {
                return Err(TransportError::UnknownSender(from))
            }
            _ => {}
        }
        let recipients = self.resolve(&to)?;
        let direction = match from {
            ActorId::Server => Direction::ServerToUser,
            ActorId::User(_) => Direction::UserToServer,
        };
        let cell = CommCell {
            phase: message.phase(),
            step: message.step(),
            direction,
        };
        let kind = message.kind();
        let bytes = message.wire_size(&self.wire);
        let copies = recipients.len() as u32;
        let counter = self.counters.entry(cell).or_default();
        counter.bytes += bytes as u64 * copies as u64;
        counter.messages += copies as u64;

        let delivered = match self.apply_tamper(&from, &to, message) {
            TamperAction::Forward(m) => Arc::new(m),
            TamperAction::Drop => {
                self.transcript.push(TranscriptEntry {
                    seq: self.seq,
                    from,
                    kind,
                    cell,
                    bytes,
                    copies,
                    payload: None,
                });
                self.seq += 1;
                return Ok(());
            }
        };
        self.transcript.push(TranscriptEntry {
            seq: self.seq,
            from,
            kind,
            cell,
            bytes,
            copies,
            payload: self.record_payloads.then(|| Arc::clone(&delivered)),
        });
        self.seq += 1;
        for recipient in recipients {
            self.queue.push(Pending {
                recipient,
                message: Arc::clone(&delivered),
            });
        }
        Ok(())
    }

    fn apply_tamper(
        &mut self,
        from: &ActorId,
        to: &Recipient,
        message: ProtocolMessage,
    ) -> TamperAction {
        match self.tamper.as_mut() {
            Some(hook) => hook(from, to, message),
            None => TamperAction::Forward(message),
        }
    }

    /// Drains the queue, applying the delivery-order policy within this
    /// batch. Every queued copy is delivered exactly once.
    pub fn deliver_all(&mut self) -> Vec<(ActorId, Arc<ProtocolMessage>)> {
        let mut batch: Vec<Pending> = self.queue.drain(..).collect();
        if let DeliveryOrder::Shuffled { seed } = self.order {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ self.drains);
            batch.shuffle(&mut rng);
        }
        self.drains += 1;
        batch
            .into_iter()
            .map(|p| {
                self.delivered_bytes += p.message.wire_size(&self.wire) as u64;
                (p.recipient, p.message)
            })
            .collect()
    }

    pub fn counters(&self) -> &BTreeMap<CommCell, CommCounter> {
        &self.counters
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn wire(&self) -> WireConfig {
        self.wire
    }

    /// Total bytes counted at send time.
    pub fn sent_bytes(&self) -> u64 {
        self.counters.values().map(|c| c.bytes).sum()
    }

    /// Total bytes actually handed to recipients.
    pub fn delivered_bytes(&self) -> u64 {
        self.delivered_bytes
    }
}

/// The named adversary behaviors, expressed as a bus hook.
fn standard_hook(mode: AdversaryMode, wire: WireConfig) -> TamperHook {
    let mut replay_cache: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
    Box::new(move |from, _to, message| match (mode, &message) {
        (
            AdversaryMode::TamperAggregate { item, dim, delta },
            ProtocolMessage::AggregateBroadcast {
                item: msg_item,
                iter,
                values,
            },
        ) if *msg_item == item => {
            debug_assert_eq!(*from, ActorId::Server);
            let mut values = values.clone();
            let slot = dim as usize % values.len();
            values[slot] = (values[slot] + delta) % wire.modulus;
            TamperAction::Forward(ProtocolMessage::AggregateBroadcast {
                item: *msg_item,
                iter: *iter,
                values,
            })
        }
        (
            AdversaryMode::TamperDecommit { user, item },
            ProtocolMessage::DecommitMsg {
                user: origin,
                item: msg_item,
                iter,
                hash_bytes,
                randomness,
            },
        ) if *origin == user && *msg_item == item && *from == ActorId::Server => {
            // Tamper only the server-side relay: the honest sender's own
            // upload reaches the (adversarial) server unmodified.
            let mut randomness = *randomness;
            randomness[0] ^= 1;
            TamperAction::Forward(ProtocolMessage::DecommitMsg {
                user: *origin,
                item: *msg_item,
                iter: *iter,
                hash_bytes: *hash_bytes,
                randomness,
            })
        }
        (AdversaryMode::DropMessage { kind, user }, _)
            if message.kind() == kind && *from == ActorId::User(user) =>
        {
            TamperAction::Drop
        }
        (
            AdversaryMode::ReplayMaskedVec { user, item },
            ProtocolMessage::MaskedMsg {
                user: origin,
                item: msg_item,
                iter,
                values,
            },
        ) if *origin == user && *msg_item == item => {
            // Keep the current header (an honest server rejects stale round
            // tags) but substitute the previous iteration's masked values.
            match replay_cache.insert((user, item), values.clone()) {
                Some(previous) => TamperAction::Forward(ProtocolMessage::MaskedMsg {
                    user: *origin,
                    item: *msg_item,
                    iter: *iter,
                    values: previous,
                }),
                None => TamperAction::Forward(message),
            }
        }
        _ => TamperAction::Forward(message),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire() -> WireConfig {
        WireConfig {
            residue_bytes: 5,
            modulus: 1 << 34,
        }
    }

    fn commit_msg(user: u32) -> ProtocolMessage {
        ProtocolMessage::CommitMsg {
            user,
            item: 0,
            iter: 1,
            commitment: [user as u8; 32],
        }
    }

    fn bus_with(n: u32, order: DeliveryOrder) -> Bus {
        let mut bus = Bus::new(wire(), order);
        bus.register_server();
        for u in 0..n {
            bus.register_user(u);
        }
        bus
    }

    #[test]
    fn send_then_deliver_exactly_once() {
        let mut bus = bus_with(2, DeliveryOrder::Fifo);
        bus.send(
            ActorId::User(0),
            Recipient::Actor(ActorId::Server),
            commit_msg(0),
        )
        .unwrap();
        let delivered = bus.deliver_all();
        assert_eq!(delivered.len(), 1);
        assert_eq!(delivered[0].0, ActorId::Server);
        assert!(bus.deliver_all().is_empty());
    }

    #[test]
    fn broadcast_counts_per_copy() {
        let mut bus = bus_with(3, DeliveryOrder::Fifo);
        let msg = commit_msg(7);
        let size = msg.wire_size(&wire());
        bus.send(ActorId::Server, Recipient::AllUsers, msg).unwrap();
        assert_eq!(bus.deliver_all().len(), 3);
        assert_eq!(bus.sent_bytes(), 3 * size as u64);
        assert_eq!(bus.delivered_bytes(), 3 * size as u64);
    }

    #[test]
    fn other_users_excludes_origin() {
        let mut bus = bus_with(3, DeliveryOrder::Fifo);
        bus.send(ActorId::Server, Recipient::OtherUsers(1), commit_msg(1))
            .unwrap();
        let recipients: Vec<ActorId> = bus.deliver_all().into_iter().map(|(r, _)| r).collect();
        assert_eq!(recipients, vec![ActorId::User(0), ActorId::User(2)]);
    }

    #[test]
    fn unknown_recipient_rejected() {
        let mut bus = bus_with(1, DeliveryOrder::Fifo);
        assert_eq!(
            bus.send(
                ActorId::User(0),
                Recipient::Actor(ActorId::User(9)),
                commit_msg(0),
            ),
            Err(TransportError::UnknownRecipient(Recipient::Actor(
                ActorId::User(9)
            )))
        );
        assert_eq!(
            bus.send(
                ActorId::User(3),
                Recipient::Actor(ActorId::Server),
                commit_msg(3),
            ),
            Err(TransportError::UnknownSender(ActorId::User(3)))
        );
    }

    #[test]
    fn shuffle_is_seed_deterministic() {
        let run = |seed| {
            let mut bus = bus_with(4, DeliveryOrder::Shuffled { seed });
            for u in 0..4 {
                bus.send(
                    ActorId::User(u),
                    Recipient::Actor(ActorId::Server),
                    commit_msg(u),
                )
                .unwrap();
            }
            bus.deliver_all()
                .into_iter()
                .map(|(_, m)| match *m {
                    ProtocolMessage::CommitMsg { user, .. } => user,
                    _ => unreachable!(),
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6), "distinct seeds should reorder 4 messages");
    }

    #[test]
    fn honest_mode_is_pure_relay() {
        let mut bus = bus_with(2, DeliveryOrder::Fifo);
        bus.install_tamper(AdversaryMode::Honest);
        for u in 0..2 {
            bus.send(
                ActorId::User(u),
                Recipient::Actor(ActorId::Server),
                commit_msg(u),
            )
            .unwrap();
        }
        bus.deliver_all();
        assert_eq!(bus.sent_bytes(), bus.delivered_bytes());
    }

    #[test]
    fn tamper_aggregate_adds_delta() {
        let mut bus = bus_with(2, DeliveryOrder::Fifo);
        bus.install_tamper(AdversaryMode::TamperAggregate {
            item: 0,
            dim: 1,
            delta: 5,
        });
        bus.send(
            ActorId::Server,
            Recipient::AllUsers,
            ProtocolMessage::AggregateBroadcast {
                item: 0,
                iter: 1,
                values: vec![10, 20],
            },
        )
        .unwrap();
        // untouched item
        bus.send(
            ActorId::Server,
            Recipient::AllUsers,
            ProtocolMessage::AggregateBroadcast {
                item: 1,
                iter: 1,
                values: vec![10, 20],
            },
        )
        .unwrap();
        let delivered = bus.deliver_all();
        match &*delivered[0].1 {
            ProtocolMessage::AggregateBroadcast { values, .. } => {
                assert_eq!(values, &vec![10, 25])
            }
            _ => panic!("unexpected message"),
        }
        match &*delivered[2].1 {
            ProtocolMessage::AggregateBroadcast { values, .. } => {
                assert_eq!(values, &vec![10, 20])
            }
            _ => panic!("unexpected message"),
        }
    }

    #[test]
    fn drop_message_vanishes_but_is_counted_as_sent() {
        let mut bus = bus_with(2, DeliveryOrder::Fifo);
        bus.install_tamper(AdversaryMode::DropMessage {
            kind: MsgKind::CommitMsg,
            user: 1,
        });
        bus.send(
            ActorId::User(0),
            Recipient::Actor(ActorId::Server),
            commit_msg(0),
        )
        .unwrap();
        bus.send(
            ActorId::User(1),
            Recipient::Actor(ActorId::Server),
            commit_msg(1),
        )
        .unwrap();
        let delivered = bus.deliver_all();
        assert_eq!(delivered.len(), 1);
        assert!(bus.sent_bytes() > bus.delivered_bytes());
    }

    #[test]
    fn replay_masked_vec_substitutes_previous_iteration() {
        let mut bus = bus_with(2, DeliveryOrder::Fifo);
        bus.install_tamper(AdversaryMode::ReplayMaskedVec { user: 0, item: 0 });
        let masked = |iter: u32, tag: u64| ProtocolMessage::MaskedMsg {
            user: 0,
            item: 0,
            iter,
            values: vec![tag],
        };
        bus.send(ActorId::User(0), Recipient::Actor(ActorId::Server), masked(1, 111))
            .unwrap();
        bus.deliver_all();
        bus.send(ActorId::User(0), Recipient::Actor(ActorId::Server), masked(2, 222))
            .unwrap();
        let delivered = bus.deliver_all();
        match &*delivered[0].1 {
            ProtocolMessage::MaskedMsg { iter, values, .. } => {
                assert_eq!(*iter, 2, "header keeps the current round tag");
                assert_eq!(values, &vec![111], "values come from the previous round");
            }
            _ => panic!("unexpected message"),
        }
    }
}
