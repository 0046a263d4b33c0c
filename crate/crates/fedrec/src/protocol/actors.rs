//! User and server state machines.
//!
//! Actors are driven in lockstep by the runner: `receive` ingests messages
//! (rejecting anything out of phase or out of iteration), and the explicit
//! step methods perform the compute of one protocol step and emit the
//! outgoing messages. Per-step compute durations are recorded at the actor
//! boundary, excluding transport, so user timings mean "compute per user".

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha20Rng;

use crate::crypto::{
    decommit, key_agree, keygen, Commitment, GroupParams, HashDigest, KeyPair, PrecompTable,
    SharedKey, POINT_BYTES, RANDOMNESS_BYTES,
};
use crate::fixedpoint::{FixedParams, FixedVec};
use crate::mf::{item_gradient, sgd_step, user_gradient, HyperParams, ItemMatrix};
use crate::protocol::message::{MsgKind, ProtocolMessage, WireConfig};
use crate::protocol::{CheckKind, Mode, ProtocolError, VerificationFailure};
use crate::secure_agg::{
    aggregate, build_input, hash_and_commit, mask, verify_aggregate_digest, AggError, AggInput,
    MaskedVec, ParticipantSet,
};
use crate::seed::derive_rng;
use crate::transport::Recipient;

/// Immutable per-run configuration shared by every actor.
pub struct RunConfig {
    pub mode: Mode,
    pub hp: HyperParams,
    pub fp: FixedParams,
    pub users: u32,
    pub items: u32,
    pub group: GroupParams,
    pub hasher: PrecompTable,
    pub master_seed: u64,
}

impl RunConfig {
    pub fn wire(&self) -> WireConfig {
        WireConfig {
            residue_bytes: self.fp.residue_bytes(),
            modulus: self.fp.modulus(),
        }
    }
}

/// One `(phase, step, millis)` compute sample.
pub(crate) type TimingSample = (u8, u8, f64);

fn millis_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UserPhase {
    Init,
    AwaitRound { iter: u32 },
    Commit { iter: u32 },
    AwaitAggregate { iter: u32 },
    Decommit { iter: u32 },
    Done { iter: u32 },
}

impl UserPhase {
    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

pub struct UserActor {
    id: u32,
    cfg: Arc<RunConfig>,
    keypair: KeyPair,
    rng: ChaCha20Rng,
    shared: BTreeMap<u32, SharedKey>,
    profile: Vec<f64>,
    ratings: Vec<(u32, f64)>,
    phase: UserPhase,

    /// Encoded `V^{t-1}`, carried across iterations once verified.
    v_enc: Vec<FixedVec>,
    /// This iteration's participant sets, as broadcast by the server.
    lists: BTreeMap<u32, ParticipantSet>,
    /// Decoded item matrix for this iteration's gradients.
    items_cache: Option<ItemMatrix>,
    /// Item gradients for the items this user contributes to.
    grads: BTreeMap<u32, Vec<f64>>,
    inputs: BTreeMap<u32, AggInput>,
    /// Own openings kept until the decommit step: `item -> (hash, r)`.
    own_open: BTreeMap<u32, (HashDigest, [u8; RANDOMNESS_BYTES])>,
    commits: BTreeMap<(u32, u32), Commitment>,
    decommits: BTreeMap<(u32, u32), ([u8; POINT_BYTES], [u8; RANDOMNESS_BYTES])>,
    aggregates: BTreeMap<u32, Vec<u64>>,
    timings: Vec<TimingSample>,
}

impl UserActor {
    pub fn new(id: u32, ratings: Vec<(u32, f64)>, profile: Vec<f64>, cfg: Arc<RunConfig>) -> Self {
        let mut rng = derive_rng(cfg.master_seed, "actor/user", id as u64);
        let keypair = keygen(&mut rng);
        Self {
            id,
            cfg,
            keypair,
            rng,
            shared: BTreeMap::new(),
            profile,
            ratings,
            phase: UserPhase::Init,
            v_enc: Vec::new(),
            lists: BTreeMap::new(),
            items_cache: None,
            grads: BTreeMap::new(),
            inputs: BTreeMap::new(),
            own_open: BTreeMap::new(),
            commits: BTreeMap::new(),
            decommits: BTreeMap::new(),
            aggregates: BTreeMap::new(),
            timings: Vec::new(),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn shared_key(&self, peer: u32) -> Option<&SharedKey> {
        self.shared.get(&peer)
    }

    pub fn shared_key_count(&self) -> usize {
        self.shared.len()
    }

    /// Decoded view of the user's current accepted item matrix.
    pub fn decoded_items(&self) -> ItemMatrix {
        decode_matrix(&self.v_enc, self.cfg.hp.dim)
    }

    pub(crate) fn drain_timings(&mut self) -> Vec<TimingSample> {
        std::mem::take(&mut self.timings)
    }

    pub fn public_key_message(&self) -> ProtocolMessage {
        ProtocolMessage::PubKey {
            user: self.id,
            key: self.keypair.public_bytes(),
        }
    }

    fn out_of_phase(&self, kind: MsgKind) -> ProtocolError {
        ProtocolError::OutOfPhase {
            actor: format!("user {}", self.id),
            kind,
            state: self.phase.describe(),
        }
    }

    pub fn receive(&mut self, msg: &ProtocolMessage) -> Result<(), ProtocolError> {
        match msg {
            ProtocolMessage::PubKey { user, key } => {
                if self.phase != UserPhase::Init {
                    return Err(self.out_of_phase(MsgKind::PubKey));
                }
                if *user == self.id {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "user {} received its own public key",
                        self.id
                    )));
                }
                if self.shared.contains_key(user) {
                    return Err(ProtocolError::DuplicateUser(*user));
                }
                let ck = key_agree(&self.keypair, key)?;
                self.shared.insert(*user, ck);
                Ok(())
            }
            ProtocolMessage::ParticipantLists { iter, lists } => {
                let UserPhase::AwaitRound { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::ParticipantLists));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::ParticipantLists));
                }
                let mut parsed = BTreeMap::new();
                for (item, users) in lists {
                    if *item >= self.cfg.items {
                        return Err(ProtocolError::UnexpectedMessage(format!(
                            "participant list for unknown item {item}"
                        )));
                    }
                    let set = ParticipantSet::new(users.clone())?;
                    if set.is_empty() {
                        return Err(ProtocolError::UnexpectedMessage(format!(
                            "empty participant list for item {item}"
                        )));
                    }
                    parsed.insert(*item, set);
                }
                self.lists = parsed;
                Ok(())
            }
            ProtocolMessage::ItemMatrixBroadcast {
                iter,
                items,
                dim,
                values,
            } => {
                let UserPhase::AwaitRound { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::ItemMatrixBroadcast));
                };
                if *iter != t || t != 1 {
                    return Err(self.out_of_phase(MsgKind::ItemMatrixBroadcast));
                }
                if *items != self.cfg.items
                    || *dim as usize != self.cfg.hp.dim
                    || values.len() != (*items as usize) * (*dim as usize)
                {
                    return Err(ProtocolError::UnexpectedMessage(
                        "item matrix broadcast has wrong shape".into(),
                    ));
                }
                let d = *dim as usize;
                let mut rows = Vec::with_capacity(*items as usize);
                for chunk in values.chunks(d) {
                    rows.push(FixedVec::from_residues(chunk.to_vec(), self.cfg.fp)?);
                }
                self.v_enc = rows;
                Ok(())
            }
            ProtocolMessage::CommitMsg {
                user,
                item,
                iter,
                commitment,
            } => {
                let UserPhase::Commit { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::CommitMsg));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::CommitMsg));
                }
                self.expect_peer_entry(*user, *item)?;
                if self
                    .commits
                    .insert((*user, *item), Commitment::from_bytes(*commitment))
                    .is_some()
                {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "duplicate commitment from user {user} for item {item}"
                    )));
                }
                Ok(())
            }
            ProtocolMessage::AggregateBroadcast { item, iter, values } => {
                let UserPhase::AwaitAggregate { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::AggregateBroadcast));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::AggregateBroadcast));
                }
                if !self.lists.contains_key(item) {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "aggregate for item {item} without participants"
                    )));
                }
                if self.aggregates.insert(*item, values.clone()).is_some() {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "duplicate aggregate for item {item}"
                    )));
                }
                Ok(())
            }
            ProtocolMessage::DecommitMsg {
                user,
                item,
                iter,
                hash_bytes,
                randomness,
            } => {
                let UserPhase::Decommit { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::DecommitMsg));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::DecommitMsg));
                }
                self.expect_peer_entry(*user, *item)?;
                if self
                    .decommits
                    .insert((*user, *item), (*hash_bytes, *randomness))
                    .is_some()
                {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "duplicate decommit from user {user} for item {item}"
                    )));
                }
                Ok(())
            }
            other => Err(self.out_of_phase(other.kind())),
        }
    }

    /// A relayed `(user, item)` entry is legitimate iff `user` participates
    /// in `item` this iteration and is not the receiver itself.
    fn expect_peer_entry(&self, user: u32, item: u32) -> Result<(), ProtocolError> {
        if user == self.id {
            return Err(ProtocolError::UnexpectedMessage(format!(
                "user {user} received a relay of its own message"
            )));
        }
        match self.lists.get(&item) {
            Some(set) if set.contains(user) => Ok(()),
            _ => Err(ProtocolError::UnexpectedMessage(format!(
                "user {user} is not a participant for item {item}"
            ))),
        }
    }

    /// Moves into iteration `t`, expecting the round broadcasts next.
    pub fn start_iteration(&mut self, t: u32) -> Result<(), ProtocolError> {
        let ready = match self.phase {
            UserPhase::Init => t == 1 && self.shared.len() as u32 == self.cfg.users - 1,
            UserPhase::Done { iter } => t == iter + 1,
            _ => false,
        };
        if !ready {
            return Err(ProtocolError::InvalidState(format!(
                "user {} cannot start iteration {t} from {}",
                self.id,
                self.phase.describe()
            )));
        }
        self.lists.clear();
        self.items_cache = None;
        self.grads.clear();
        self.inputs.clear();
        self.own_open.clear();
        self.commits.clear();
        self.decommits.clear();
        self.aggregates.clear();
        self.phase = UserPhase::AwaitRound { iter: t };
        Ok(())
    }

    fn current_iter(&self) -> u32 {
        match self.phase {
            UserPhase::AwaitRound { iter }
            | UserPhase::Commit { iter }
            | UserPhase::AwaitAggregate { iter }
            | UserPhase::Decommit { iter }
            | UserPhase::Done { iter } => iter,
            UserPhase::Init => 0,
        }
    }

    /// Items this user contributes masked inputs for.
    fn participating_items(&self) -> Vec<u32> {
        self.lists
            .iter()
            .filter(|(_, set)| set.contains(self.id))
            .map(|(&k, _)| k)
            .collect()
    }

    /// Phase 1: update the own profile and compute item gradients against
    /// `V^{t-1}`.
    pub fn phase1_update(&mut self) -> Result<(), ProtocolError> {
        let UserPhase::AwaitRound { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(format!(
                "user {} ran phase 1 in {}",
                self.id,
                self.phase.describe()
            )));
        };
        if self.v_enc.len() != self.cfg.items as usize {
            return Err(ProtocolError::InvalidState(
                "item matrix not received before user update".into(),
            ));
        }
        let start = Instant::now();
        let items = decode_matrix(&self.v_enc, self.cfg.hp.dim);

        let grad_u = user_gradient(&self.profile, &items, &self.ratings, &self.cfg.hp)?;
        // Item gradients use the pre-update profile.
        for k in self.participating_items() {
            let grad = match self.rating_for(k) {
                Some(r) => item_gradient(&self.profile, items.row(k), r, &self.cfg.hp)?,
                // Unrated items contribute an all-zero gradient (full-upload
                // padding).
                None => vec![0.0; self.cfg.hp.dim],
            };
            self.grads.insert(k, grad);
        }
        self.profile = sgd_step(&self.profile, &grad_u)?;
        self.items_cache = Some(items);
        self.timings.push((1, 0, millis_since(start)));
        self.phase = UserPhase::Commit { iter };
        Ok(())
    }

    fn rating_for(&self, item: u32) -> Option<f64> {
        self.ratings
            .binary_search_by_key(&item, |&(k, _)| k)
            .ok()
            .map(|idx| self.ratings[idx].1)
    }

    /// Phase 2 step 0: build inputs, hash, commit.
    pub fn phase2_commit(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let UserPhase::Commit { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(format!(
                "user {} ran commit step in {}",
                self.id,
                self.phase.describe()
            )));
        };
        let start = Instant::now();
        let items = self
            .items_cache
            .as_ref()
            .ok_or_else(|| ProtocolError::InvalidState("missing decoded matrix".into()))?;
        let mut out = Vec::new();
        for k in self.participating_items() {
            let set = &self.lists[&k];
            let grad = &self.grads[&k];
            let input = build_input(
                items.row(k),
                grad,
                set.len() as u32,
                self.cfg.fp,
                k,
                iter,
            )?;
            let (digest, commitment, randomness) =
                hash_and_commit(&input, &self.cfg.hasher, &mut self.rng)?;
            self.inputs.insert(k, input);
            self.own_open.insert(k, (digest, randomness));
            out.push(ProtocolMessage::CommitMsg {
                user: self.id,
                item: k,
                iter,
                commitment: *commitment.as_bytes(),
            });
        }
        self.timings.push((2, 0, millis_since(start)));
        Ok(out)
    }

    /// Phase 2 step 1: mask the inputs.
    pub fn phase2_mask(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let UserPhase::Commit { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(format!(
                "user {} ran mask step in {}",
                self.id,
                self.phase.describe()
            )));
        };
        let start = Instant::now();
        let mut out = Vec::new();
        for k in self.participating_items() {
            let set = &self.lists[&k];
            let masked = mask(&self.inputs[&k], self.id, set, &self.shared, self.cfg.fp)?;
            out.push(ProtocolMessage::MaskedMsg {
                user: self.id,
                item: k,
                iter,
                values: masked.vec.values().to_vec(),
            });
        }
        self.timings.push((2, 1, millis_since(start)));
        self.phase = UserPhase::AwaitAggregate { iter };
        Ok(out)
    }

    /// Phase 3 step 0: reveal the openings.
    pub fn phase3_decommit(&mut self) -> Result<Vec<ProtocolMessage>, ProtocolError> {
        let UserPhase::AwaitAggregate { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(format!(
                "user {} ran decommit step in {}",
                self.id,
                self.phase.describe()
            )));
        };
        let start = Instant::now();
        let out = self
            .own_open
            .iter()
            .map(|(&item, (digest, randomness))| ProtocolMessage::DecommitMsg {
                user: self.id,
                item,
                iter,
                hash_bytes: digest.to_bytes(),
                randomness: *randomness,
            })
            .collect();
        self.timings.push((3, 0, millis_since(start)));
        self.phase = UserPhase::Decommit { iter };
        Ok(out)
    }

    /// Phase 3 steps 1 and 2: the commitment checks, then the aggregation
    /// equality tests. On success the aggregates become `V^t`.
    pub fn phase3_verify(
        &mut self,
    ) -> Result<Result<(), VerificationFailure>, ProtocolError> {
        let UserPhase::Decommit { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(format!(
                "user {} ran verify step in {}",
                self.id,
                self.phase.describe()
            )));
        };

        // Step 1: every participant's opening must match its commitment.
        let start = Instant::now();
        let mut commit_failure = None;
        'items: for (&item, set) in &self.lists {
            for &peer in set.members() {
                if peer == self.id {
                    continue;
                }
                let commitment = self.commits.get(&(peer, item)).ok_or_else(|| {
                    ProtocolError::UnexpectedMessage(format!(
                        "missing commitment from user {peer} for item {item}"
                    ))
                })?;
                let (hash_bytes, randomness) =
                    self.decommits.get(&(peer, item)).ok_or_else(|| {
                        ProtocolError::UnexpectedMessage(format!(
                            "missing decommit from user {peer} for item {item}"
                        ))
                    })?;
                if !decommit(hash_bytes, commitment, randomness) {
                    commit_failure = Some(VerificationFailure {
                        user: self.id,
                        item,
                        check: CheckKind::CommitmentCheck,
                    });
                    break 'items;
                }
            }
        }
        self.timings.push((3, 1, millis_since(start)));
        if let Some(failure) = commit_failure {
            return Ok(Err(failure));
        }

        // Step 2: hash each announced aggregate and compare with the product
        // of the participants' input hashes. Identical hash bytes (all
        // non-raters of an item submit the same zero-gradient input in
        // full-upload mode) are decompressed once and folded in by
        // multiplicity.
        let start = Instant::now();
        let mut agg_failure = None;
        for (&item, set) in &self.lists {
            let raw = self.aggregates.get(&item).ok_or_else(|| {
                ProtocolError::UnexpectedMessage(format!("missing aggregate for item {item}"))
            })?;
            let fail = || VerificationFailure {
                user: self.id,
                item,
                check: CheckKind::AggregateCheck,
            };
            if raw.len() != self.cfg.hp.dim {
                agg_failure = Some(fail());
                break;
            }
            let Ok(v_agg) = FixedVec::from_residues(raw.clone(), self.cfg.fp) else {
                agg_failure = Some(fail());
                break;
            };
            let mut product = HashDigest::identity();
            let mut multiplicities: BTreeMap<&[u8; POINT_BYTES], u32> = BTreeMap::new();
            for &peer in set.members() {
                if peer == self.id {
                    product = product.combine(&self.own_open[&item].0);
                } else {
                    *multiplicities.entry(&self.decommits[&(peer, item)].0).or_default() += 1;
                }
            }
            let mut malformed = false;
            for (hash_bytes, count) in multiplicities {
                match HashDigest::from_bytes(hash_bytes) {
                    Some(h) => product = product.combine(&h.mul_small(count)),
                    None => {
                        // The opening passed the commitment check, so the
                        // committer itself produced a non-point; reject it.
                        malformed = true;
                        break;
                    }
                }
            }
            if malformed {
                agg_failure = Some(VerificationFailure {
                    user: self.id,
                    item,
                    check: CheckKind::CommitmentCheck,
                });
                break;
            }
            if !verify_aggregate_digest(&v_agg, &product, &self.cfg.hasher)? {
                agg_failure = Some(fail());
                break;
            }
        }
        self.timings.push((3, 2, millis_since(start)));
        if let Some(failure) = agg_failure {
            return Ok(Err(failure));
        }

        // Accept V^t.
        for &item in self.lists.keys() {
            let values = self.aggregates[&item].clone();
            self.v_enc[item as usize] = FixedVec::from_residues(values, self.cfg.fp)
                .expect("validated above");
        }
        self.phase = UserPhase::Done { iter };
        Ok(Ok(()))
    }

    pub fn abort_message(&self, failure: &VerificationFailure) -> ProtocolMessage {
        ProtocolMessage::Abort {
            user: self.id,
            iter: self.current_iter(),
            reason: match failure.check {
                CheckKind::CommitmentCheck => crate::protocol::AbortReason::CommitmentCheck,
                CheckKind::AggregateCheck => crate::protocol::AbortReason::AggregateCheck,
            },
        }
    }
}

fn decode_matrix(rows: &[FixedVec], dim: usize) -> ItemMatrix {
    let decoded: Vec<Vec<f64>> = rows.iter().map(|r| r.decode()).collect();
    ItemMatrix::from_rows(decoded, dim).expect("encoded rows share the latent dimension")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerPhase {
    Init,
    Idle { iter: u32 },
    AwaitCommits { iter: u32 },
    AwaitMasked { iter: u32 },
    AwaitDecommits { iter: u32 },
}

pub struct ServerActor {
    cfg: Arc<RunConfig>,
    phase: ServerPhase,
    /// Static participant lists; rebroadcast at the start of every
    /// iteration (no dropout).
    lists: BTreeMap<u32, ParticipantSet>,
    v_enc: Vec<FixedVec>,
    pubkeys: BTreeMap<u32, [u8; POINT_BYTES]>,
    commits: BTreeMap<(u32, u32), [u8; 32]>,
    masked: BTreeMap<u32, BTreeMap<u32, MaskedVec>>,
    decommits: BTreeMap<(u32, u32), ([u8; POINT_BYTES], [u8; RANDOMNESS_BYTES])>,
    aborted: Vec<(u32, crate::protocol::AbortReason)>,
    timings: Vec<TimingSample>,
}

impl ServerActor {
    pub fn new(
        cfg: Arc<RunConfig>,
        lists: BTreeMap<u32, ParticipantSet>,
        initial_items: &ItemMatrix,
    ) -> Result<Self, ProtocolError> {
        let mut v_enc = Vec::with_capacity(initial_items.items());
        for row in initial_items.rows() {
            v_enc.push(FixedVec::encode(row, cfg.fp)?);
        }
        Ok(Self {
            cfg,
            phase: ServerPhase::Init,
            lists,
            v_enc,
            pubkeys: BTreeMap::new(),
            commits: BTreeMap::new(),
            masked: BTreeMap::new(),
            decommits: BTreeMap::new(),
            aborted: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub(crate) fn drain_timings(&mut self) -> Vec<TimingSample> {
        std::mem::take(&mut self.timings)
    }

    /// The server's canonical decoded item matrix.
    pub fn decoded_items(&self) -> ItemMatrix {
        decode_matrix(&self.v_enc, self.cfg.hp.dim)
    }

    pub fn aborted_users(&self) -> &[(u32, crate::protocol::AbortReason)] {
        &self.aborted
    }

    fn out_of_phase(&self, kind: MsgKind) -> ProtocolError {
        ProtocolError::OutOfPhase {
            actor: "server".into(),
            kind,
            state: format!("{:?}", self.phase),
        }
    }

    fn known_participant(&self, user: u32, item: u32) -> Result<&ParticipantSet, ProtocolError> {
        match self.lists.get(&item) {
            Some(set) if set.contains(user) => Ok(set),
            _ => Err(ProtocolError::UnexpectedMessage(format!(
                "user {user} is not a participant for item {item}"
            ))),
        }
    }

    pub fn receive(&mut self, msg: &ProtocolMessage) -> Result<(), ProtocolError> {
        match msg {
            ProtocolMessage::PubKey { user, key } => {
                if self.phase != ServerPhase::Init {
                    return Err(self.out_of_phase(MsgKind::PubKey));
                }
                if *user >= self.cfg.users {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "public key from unknown user {user}"
                    )));
                }
                if self.pubkeys.insert(*user, *key).is_some() {
                    return Err(ProtocolError::DuplicateUser(*user));
                }
                Ok(())
            }
            ProtocolMessage::CommitMsg {
                user,
                item,
                iter,
                commitment,
            } => {
                let ServerPhase::AwaitCommits { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::CommitMsg));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::CommitMsg));
                }
                self.known_participant(*user, *item)?;
                if self.commits.insert((*user, *item), *commitment).is_some() {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "duplicate commitment from user {user} for item {item}"
                    )));
                }
                Ok(())
            }
            ProtocolMessage::MaskedMsg {
                user,
                item,
                iter,
                values,
            } => {
                let ServerPhase::AwaitMasked { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::MaskedMsg));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::MaskedMsg));
                }
                self.known_participant(*user, *item)?;
                let vec = FixedVec::from_residues(values.clone(), self.cfg.fp)?;
                let masked = MaskedVec {
                    item: *item,
                    iter: *iter,
                    owner: *user,
                    vec,
                };
                if self
                    .masked
                    .entry(*item)
                    .or_default()
                    .insert(*user, masked)
                    .is_some()
                {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "duplicate masked vector from user {user} for item {item}"
                    )));
                }
                Ok(())
            }
            ProtocolMessage::DecommitMsg {
                user,
                item,
                iter,
                hash_bytes,
                randomness,
            } => {
                let ServerPhase::AwaitDecommits { iter: t } = self.phase else {
                    return Err(self.out_of_phase(MsgKind::DecommitMsg));
                };
                if *iter != t {
                    return Err(self.out_of_phase(MsgKind::DecommitMsg));
                }
                self.known_participant(*user, *item)?;
                if self
                    .decommits
                    .insert((*user, *item), (*hash_bytes, *randomness))
                    .is_some()
                {
                    return Err(ProtocolError::UnexpectedMessage(format!(
                        "duplicate decommit from user {user} for item {item}"
                    )));
                }
                Ok(())
            }
            ProtocolMessage::Abort { user, reason, .. } => {
                self.aborted.push((*user, *reason));
                Ok(())
            }
            other => Err(self.out_of_phase(other.kind())),
        }
    }

    /// Phase 0 relay: forward each registered public key to the other users.
    pub fn relay_pubkeys(&mut self) -> Result<Vec<(Recipient, ProtocolMessage)>, ProtocolError> {
        if self.phase != ServerPhase::Init {
            return Err(ProtocolError::InvalidState(
                "public keys already relayed".into(),
            ));
        }
        if self.pubkeys.len() as u32 != self.cfg.users {
            return Err(ProtocolError::InvalidState(format!(
                "expected {} public keys, have {}",
                self.cfg.users,
                self.pubkeys.len()
            )));
        }
        let out = self
            .pubkeys
            .iter()
            .map(|(&user, key)| {
                (
                    Recipient::OtherUsers(user),
                    ProtocolMessage::PubKey { user, key: *key },
                )
            })
            .collect();
        self.phase = ServerPhase::Idle { iter: 0 };
        Ok(out)
    }

    /// Starts iteration `t`: broadcasts the participant lists, and the
    /// initial encoded item matrix in the first iteration.
    pub fn start_round(&mut self, t: u32) -> Result<Vec<(Recipient, ProtocolMessage)>, ProtocolError> {
        let ServerPhase::Idle { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(format!(
                "server cannot start round {t} from {:?}",
                self.phase
            )));
        };
        if t != iter + 1 {
            return Err(ProtocolError::InvalidState(format!(
                "server cannot start round {t} after round {iter}"
            )));
        }
        let start = Instant::now();
        self.commits.clear();
        self.masked.clear();
        self.decommits.clear();
        let mut out = Vec::new();
        if t == 1 {
            let values: Vec<u64> = self
                .v_enc
                .iter()
                .flat_map(|row| row.values().iter().copied())
                .collect();
            out.push((
                Recipient::AllUsers,
                ProtocolMessage::ItemMatrixBroadcast {
                    iter: t,
                    items: self.cfg.items,
                    dim: self.cfg.hp.dim as u32,
                    values,
                },
            ));
        }
        out.push((
            Recipient::AllUsers,
            ProtocolMessage::ParticipantLists {
                iter: t,
                lists: self
                    .lists
                    .iter()
                    .map(|(&k, set)| (k, set.members().to_vec()))
                    .collect(),
            },
        ));
        self.timings.push((1, 0, millis_since(start)));
        self.phase = ServerPhase::AwaitCommits { iter: t };
        Ok(out)
    }

    fn expected_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.lists
            .iter()
            .flat_map(|(&item, set)| set.members().iter().map(move |&user| (user, item)))
    }

    /// Phase 2 step 0 barrier and relay.
    pub fn relay_commits(&mut self) -> Result<Vec<(Recipient, ProtocolMessage)>, ProtocolError> {
        let ServerPhase::AwaitCommits { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(
                "commit relay outside commit step".into(),
            ));
        };
        let start = Instant::now();
        for (user, item) in self.expected_pairs() {
            if !self.commits.contains_key(&(user, item)) {
                return Err(AggError::ParticipantMismatch {
                    item,
                    reason: format!("missing commitment from user {user}"),
                }
                .into());
            }
        }
        let out = self
            .commits
            .iter()
            .map(|(&(user, item), commitment)| {
                (
                    Recipient::OtherUsers(user),
                    ProtocolMessage::CommitMsg {
                        user,
                        item,
                        iter,
                        commitment: *commitment,
                    },
                )
            })
            .collect();
        self.timings.push((2, 0, millis_since(start)));
        self.phase = ServerPhase::AwaitMasked { iter };
        Ok(out)
    }

    /// Phase 2 step 2: aggregate every item once all masked vectors are in,
    /// adopt the results as `V^t`, and broadcast them.
    pub fn aggregate_round(&mut self) -> Result<Vec<(Recipient, ProtocolMessage)>, ProtocolError> {
        let ServerPhase::AwaitMasked { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(
                "aggregation outside masked step".into(),
            ));
        };
        let start = Instant::now();
        let mut out = Vec::new();
        for (&item, set) in &self.lists {
            let per_item = self.masked.remove(&item).unwrap_or_default();
            let vectors: Vec<MaskedVec> = per_item.into_values().collect();
            let result = aggregate(&vectors, set, item, iter)?;
            out.push((
                Recipient::AllUsers,
                ProtocolMessage::AggregateBroadcast {
                    item,
                    iter,
                    values: result.values().to_vec(),
                },
            ));
            self.v_enc[item as usize] = result;
        }
        self.timings.push((2, 2, millis_since(start)));
        self.phase = ServerPhase::AwaitDecommits { iter };
        Ok(out)
    }

    /// Phase 3 step 0 barrier and relay.
    pub fn relay_decommits(&mut self) -> Result<Vec<(Recipient, ProtocolMessage)>, ProtocolError> {
        let ServerPhase::AwaitDecommits { iter } = self.phase else {
            return Err(ProtocolError::InvalidState(
                "decommit relay outside decommit step".into(),
            ));
        };
        let start = Instant::now();
        for (user, item) in self.expected_pairs() {
            if !self.decommits.contains_key(&(user, item)) {
                return Err(AggError::ParticipantMismatch {
                    item,
                    reason: format!("missing decommit from user {user}"),
                }
                .into());
            }
        }
        let out = self
            .decommits
            .iter()
            .map(|(&(user, item), (hash_bytes, randomness))| {
                (
                    Recipient::OtherUsers(user),
                    ProtocolMessage::DecommitMsg {
                        user,
                        item,
                        iter,
                        hash_bytes: *hash_bytes,
                        randomness: *randomness,
                    },
                )
            })
            .collect();
        self.timings.push((3, 0, millis_since(start)));
        self.phase = ServerPhase::Idle { iter };
        Ok(out)
    }
}
