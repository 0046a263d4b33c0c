//! Training driver: builds the actors, runs phases in lockstep barriers,
//! and collects timing, accuracy, and communication traces.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{precompute_fixed_base, setup_group};
use crate::data::participant_lists;
use crate::fixedpoint::{check_sum_bound, FixedParams};
use crate::mf::{init_item_matrix, init_user_profiles, plain_fed_round, rmse, HyperParams,
    ItemMatrix, RatingMatrix};
use crate::protocol::actors::{RunConfig, ServerActor, UserActor};
use crate::protocol::message::{CommCell, WireConfig};
use crate::protocol::{CheckKind, Mode, ProtocolError, VerificationFailure};
use crate::transport::{
    ActorId, AdversaryMode, Bus, CommCounter, DeliveryOrder, Recipient, TranscriptEntry,
};

/// Who a timing row belongs to. User rows are averages across all users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Entity {
    User,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingRecord {
    pub iter: u32,
    pub phase: u8,
    pub step: u8,
    pub entity: Entity,
    pub millis: f64,
}

/// Everything needed to run one training experiment.
pub struct TrainingSetup {
    pub mode: Mode,
    pub hp: HyperParams,
    pub fp: FixedParams,
    pub train: RatingMatrix,
    pub test: Option<RatingMatrix>,
    pub master_seed: u64,
    pub adversary: AdversaryMode,
    pub window_bits: u32,
    pub delivery: DeliveryOrder,
    pub record_payloads: bool,
    /// Per-element magnitude bound fed to the sum-bound check.
    pub value_bound: f64,
}

impl TrainingSetup {
    pub fn new(mode: Mode, hp: HyperParams, fp: FixedParams, train: RatingMatrix) -> Self {
        Self {
            mode,
            hp,
            fp,
            train,
            test: None,
            master_seed: 7,
            adversary: AdversaryMode::Honest,
            window_bits: 8,
            delivery: DeliveryOrder::Fifo,
            record_payloads: false,
            value_bound: 4.0,
        }
    }
}

/// The halt record of a detected verification failure.
#[derive(Debug, Clone)]
pub struct FailureRecord {
    pub iteration: u32,
    pub failures: Vec<VerificationFailure>,
}

impl FailureRecord {
    /// The first failing item (items are checked in ascending order).
    pub fn item(&self) -> u32 {
        self.failures[0].item
    }

    pub fn check(&self) -> CheckKind {
        self.failures[0].check
    }

    pub fn users(&self) -> Vec<u32> {
        self.failures.iter().map(|f| f.user).collect()
    }
}

#[derive(Debug, Error)]
pub enum IterationError {
    #[error("verification failed in iteration {}", record.iteration)]
    Verification { record: FailureRecord },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Per-iteration timing rows plus total wall time.
#[derive(Debug, Clone)]
pub struct IterationReport {
    pub timing: Vec<TimingRecord>,
    pub millis: f64,
}

/// Output of a full training run.
#[derive(Debug)]
pub struct TrainingRun {
    pub mode: Mode,
    pub iterations_completed: u32,
    /// RMSE on the held-out split after each completed iteration.
    pub rmse_trace: Vec<f64>,
    pub timing: Vec<TimingRecord>,
    pub iteration_millis: Vec<f64>,
    pub failure: Option<FailureRecord>,
    pub user_profiles: Vec<Vec<f64>>,
    pub item_matrix: ItemMatrix,
    pub comm: BTreeMap<CommCell, CommCounter>,
    pub transcript: Vec<TranscriptEntry>,
    pub wire: WireConfig,
}

/// One server, `n` user actors, and the bus between them.
pub struct Simulation {
    pub cfg: Arc<RunConfig>,
    pub users: Vec<UserActor>,
    pub server: ServerActor,
    pub bus: Bus,
}

impl Simulation {
    /// Builds actors, group parameters, and offline tables for a secure run.
    pub fn build(setup: &TrainingSetup) -> Result<Self, ProtocolError> {
        if !setup.mode.is_secure() {
            return Err(ProtocolError::InvalidState(
                "plaintext mode does not use the message bus".into(),
            ));
        }
        let n = setup.train.users();
        let m = setup.train.items();
        let d = setup.hp.dim;

        let lists = participant_lists(&setup.train, setup.mode, n);
        let max_participants = lists.values().map(|s| s.len() as u32).max().unwrap_or(0);
        check_sum_bound(setup.fp, setup.value_bound, max_participants)
            .map_err(ProtocolError::FixedPoint)?;

        let group_seed = format!("fedrec/group/{}", setup.master_seed);
        let group = setup_group(d, group_seed.as_bytes());
        let hasher = precompute_fixed_base(&group, setup.window_bits)?;
        let cfg = Arc::new(RunConfig {
            mode: setup.mode,
            hp: setup.hp,
            fp: setup.fp,
            users: n,
            items: m,
            group,
            hasher,
            master_seed: setup.master_seed,
        });

        let profiles = init_user_profiles(n, d, setup.master_seed);
        let users: Vec<UserActor> = profiles
            .into_iter()
            .enumerate()
            .map(|(id, profile)| {
                UserActor::new(
                    id as u32,
                    setup.train.user_items(id as u32).to_vec(),
                    profile,
                    Arc::clone(&cfg),
                )
            })
            .collect();

        let initial_items = init_item_matrix(m, d, setup.master_seed);
        let server = ServerActor::new(Arc::clone(&cfg), lists, &initial_items)?;

        let mut bus = Bus::new(cfg.wire(), setup.delivery);
        bus.register_server();
        for id in 0..n {
            bus.register_user(id);
        }
        bus.set_record_payloads(setup.record_payloads);
        bus.install_tamper(setup.adversary);

        Ok(Self {
            cfg,
            users,
            server,
            bus,
        })
    }
}

fn dispatch(sim: &mut Simulation) -> Result<(), ProtocolError> {
    for (recipient, msg) in sim.bus.deliver_all() {
        match recipient {
            ActorId::Server => sim.server.receive(&msg)?,
            ActorId::User(id) => sim.users[id as usize].receive(&msg)?,
        }
    }
    Ok(())
}

fn send_from_server(
    sim: &mut Simulation,
    batch: Vec<(Recipient, crate::protocol::ProtocolMessage)>,
) -> Result<(), ProtocolError> {
    for (to, msg) in batch {
        sim.bus.send(ActorId::Server, to, msg)?;
    }
    Ok(())
}

/// Phase 0: key exchange and initial state distribution.
pub fn run_initialization(sim: &mut Simulation) -> Result<(), ProtocolError> {
    for user in &sim.users {
        sim.bus.send(
            ActorId::User(user.id()),
            Recipient::Actor(ActorId::Server),
            user.public_key_message(),
        )?;
    }
    dispatch(sim)?;
    let relays = sim.server.relay_pubkeys()?;
    send_from_server(sim, relays)?;
    dispatch(sim)?;
    for user in &sim.users {
        if user.shared_key_count() as u32 != sim.cfg.users - 1 {
            return Err(ProtocolError::InvalidState(format!(
                "user {} holds {} shared keys, expected {}",
                user.id(),
                user.shared_key_count(),
                sim.cfg.users - 1
            )));
        }
    }
    Ok(())
}

/// Runs one full iteration `t` through all phases.
pub fn run_iteration(sim: &mut Simulation, t: u32) -> Result<IterationReport, IterationError> {
    let started = Instant::now();

    // Phase 1: round start broadcast, then local user updates.
    let round_msgs = sim.server.start_round(t)?;
    send_from_server(sim, round_msgs)?;
    for user in &mut sim.users {
        user.start_iteration(t)?;
    }
    dispatch(sim)?;
    par_step(&mut sim.users, |u| u.phase1_update().map(|()| Vec::new()))?;

    // Phase 2 step 0: commitments up, relayed to the other users.
    let commit_batches = par_step(&mut sim.users, |u| u.phase2_commit())?;
    send_user_batches(sim, commit_batches)?;
    dispatch(sim)?;
    let relays = sim.server.relay_commits()?;
    send_from_server(sim, relays)?;
    dispatch(sim)?;

    // Phase 2 step 1: masked vectors up.
    let masked_batches = par_step(&mut sim.users, |u| u.phase2_mask())?;
    send_user_batches(sim, masked_batches)?;
    dispatch(sim)?;

    // Phase 2 step 2: aggregation and broadcast.
    let aggregates = sim.server.aggregate_round()?;
    send_from_server(sim, aggregates)?;
    dispatch(sim)?;

    // Phase 3 step 0: decommit strings up, relayed onwards.
    let decommit_batches = par_step(&mut sim.users, |u| u.phase3_decommit())?;
    send_user_batches(sim, decommit_batches)?;
    dispatch(sim)?;
    let relays = sim.server.relay_decommits()?;
    send_from_server(sim, relays)?;
    dispatch(sim)?;

    // Phase 3 steps 1-2: every user verifies.
    let verdicts: Vec<Result<Result<(), VerificationFailure>, ProtocolError>> =
        sim.users.par_iter_mut().map(|u| u.phase3_verify()).collect();
    let mut failures = Vec::new();
    for verdict in verdicts {
        match verdict? {
            Ok(()) => {}
            Err(failure) => failures.push(failure),
        }
    }
    if !failures.is_empty() {
        for failure in &failures {
            let user = &sim.users[failure.user as usize];
            sim.bus
                .send(
                    ActorId::User(failure.user),
                    Recipient::Actor(ActorId::Server),
                    user.abort_message(failure),
                )
                .map_err(ProtocolError::from)?;
        }
        dispatch(sim)?;
        return Err(IterationError::Verification {
            record: FailureRecord {
                iteration: t,
                failures,
            },
        });
    }

    Ok(IterationReport {
        timing: harvest_timings(sim, t),
        millis: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs a user step on all actors in parallel, preserving user order in the
/// returned batches.
fn par_step<F>(
    users: &mut [UserActor],
    f: F,
) -> Result<Vec<Vec<crate::protocol::ProtocolMessage>>, ProtocolError>
where
    F: Fn(&mut UserActor) -> Result<Vec<crate::protocol::ProtocolMessage>, ProtocolError>
        + Send
        + Sync,
{
    users.par_iter_mut().map(&f).collect()
}

fn send_user_batches(
    sim: &mut Simulation,
    batches: Vec<Vec<crate::protocol::ProtocolMessage>>,
) -> Result<(), ProtocolError> {
    for (id, batch) in batches.into_iter().enumerate() {
        for msg in batch {
            sim.bus
                .send(ActorId::User(id as u32), Recipient::Actor(ActorId::Server), msg)?;
        }
    }
    Ok(())
}

fn harvest_timings(sim: &mut Simulation, t: u32) -> Vec<TimingRecord> {
    let n = sim.users.len() as f64;
    let mut user_cells: BTreeMap<(u8, u8), f64> = BTreeMap::new();
    for user in &mut sim.users {
        for (phase, step, millis) in user.drain_timings() {
            *user_cells.entry((phase, step)).or_default() += millis;
        }
    }
    let mut rows: Vec<TimingRecord> = user_cells
        .into_iter()
        .map(|((phase, step), total)| TimingRecord {
            iter: t,
            phase,
            step,
            entity: Entity::User,
            millis: total / n,
        })
        .collect();
    for (phase, step, millis) in sim.server.drain_timings() {
        rows.push(TimingRecord {
            iter: t,
            phase,
            step,
            entity: Entity::Server,
            millis,
        });
    }
    rows
}

/// Runs the configured number of iterations, recording per-iteration RMSE on
/// the held-out split and halting on the first detected failure.
pub fn run_training(setup: &TrainingSetup) -> Result<TrainingRun, ProtocolError> {
    match setup.mode {
        Mode::Plaintext => plaintext_training(setup),
        _ => secure_training(setup),
    }
}

fn secure_training(setup: &TrainingSetup) -> Result<TrainingRun, ProtocolError> {
    let mut sim = Simulation::build(setup)?;
    run_initialization(&mut sim)?;

    let mut run = TrainingRun {
        mode: setup.mode,
        iterations_completed: 0,
        rmse_trace: Vec::new(),
        timing: Vec::new(),
        iteration_millis: Vec::new(),
        failure: None,
        user_profiles: Vec::new(),
        item_matrix: ItemMatrix::zeros(0, setup.hp.dim),
        comm: BTreeMap::new(),
        transcript: Vec::new(),
        wire: sim.cfg.wire(),
    };

    for t in 1..=setup.hp.iterations {
        match run_iteration(&mut sim, t) {
            Ok(report) => {
                run.timing.extend(report.timing);
                run.iteration_millis.push(report.millis);
                run.iterations_completed = t;
                if let Some(test) = &setup.test {
                    let profiles: Vec<Vec<f64>> =
                        sim.users.iter().map(|u| u.profile().to_vec()).collect();
                    let items = sim.server.decoded_items();
                    run.rmse_trace.push(rmse(&profiles, &items, test)?);
                }
            }
            Err(IterationError::Verification { record }) => {
                run.failure = Some(record);
                break;
            }
            Err(IterationError::Protocol(e)) => return Err(e),
        }
    }

    run.user_profiles = sim.users.iter().map(|u| u.profile().to_vec()).collect();
    run.item_matrix = sim.server.decoded_items();
    run.comm = sim.bus.counters().clone();
    run.transcript = sim.bus.transcript().to_vec();
    Ok(run)
}

/// Serializes a run's transcript payloads for bit-exactness comparisons.
pub fn transcript_bytes(run: &TrainingRun) -> Vec<Vec<u8>> {
    run.transcript
        .iter()
        .filter_map(|entry| entry.payload.as_ref())
        .map(|msg| msg.to_bytes(&run.wire))
        .collect()
}

fn plaintext_training(setup: &TrainingSetup) -> Result<TrainingRun, ProtocolError> {
    let n = setup.train.users();
    let m = setup.train.items();
    let d = setup.hp.dim;
    let mut profiles = init_user_profiles(n, d, setup.master_seed);
    let mut items = init_item_matrix(m, d, setup.master_seed);

    let mut run = TrainingRun {
        mode: Mode::Plaintext,
        iterations_completed: 0,
        rmse_trace: Vec::new(),
        timing: Vec::new(),
        iteration_millis: Vec::new(),
        failure: None,
        user_profiles: Vec::new(),
        item_matrix: ItemMatrix::zeros(0, d),
        comm: BTreeMap::new(),
        transcript: Vec::new(),
        wire: WireConfig {
            residue_bytes: setup.fp.residue_bytes(),
            modulus: setup.fp.modulus(),
        },
    };

    for t in 1..=setup.hp.iterations {
        let started = Instant::now();
        let (next_profiles, next_items) =
            plain_fed_round(&profiles, &items, &setup.train, &setup.hp)?;
        profiles = next_profiles;
        items = next_items;
        let millis = started.elapsed().as_secs_f64() * 1e3;
        run.timing.push(TimingRecord {
            iter: t,
            phase: 1,
            step: 0,
            entity: Entity::User,
            millis,
        });
        run.iteration_millis.push(millis);
        run.iterations_completed = t;
        if let Some(test) = &setup.test {
            run.rmse_trace.push(rmse(&profiles, &items, test)?);
        }
    }

    run.user_profiles = profiles;
    run.item_matrix = items;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::CheckKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const B34: u64 = 1 << 34;

    fn small_ratings(n: u32, m: u32, seed: u64) -> RatingMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for i in 0..n {
            for k in 0..m {
                if rng.random::<f64>() < 0.7 {
                    let r = (rng.random_range(1..=10) as f64) / 2.0;
                    entries.push((i, k, r));
                }
            }
        }
        // Guarantee every user rated something.
        for i in 0..n {
            if !entries.iter().any(|&(u, _, _)| u == i) {
                entries.push((i, i % m, 3.0));
            }
        }
        RatingMatrix::from_entries(n, m, entries).unwrap()
    }

    fn setup_for(mode: Mode, n: u32, m: u32, d: usize, iters: u32, seed: u64) -> TrainingSetup {
        let hp = HyperParams {
            dim: d,
            gamma: 0.01,
            lambda: 0.02,
            mu: 0.02,
            iterations: iters,
        };
        let fp = FixedParams::new(10_000_000, B34, n.max(1)).unwrap();
        let mut setup = TrainingSetup::new(mode, hp, fp, small_ratings(n, m, seed));
        setup.master_seed = seed;
        setup.window_bits = 4;
        setup
    }

    /// Max elementwise deviation between a secure run and the plaintext
    /// oracle on the same data and seed.
    fn oracle_gap(run: &TrainingRun, setup: &TrainingSetup) -> f64 {
        let mut profiles = init_user_profiles(setup.train.users(), setup.hp.dim, setup.master_seed);
        let mut items = init_item_matrix(setup.train.items(), setup.hp.dim, setup.master_seed);
        for _ in 0..run.iterations_completed {
            let (p, v) = plain_fed_round(&profiles, &items, &setup.train, &setup.hp).unwrap();
            profiles = p;
            items = v;
        }
        let mut gap: f64 = 0.0;
        for (got, want) in run.user_profiles.iter().flatten().zip(profiles.iter().flatten()) {
            gap = gap.max((got - want).abs());
        }
        for (got, want) in run.item_matrix.rows().zip(items.rows()) {
            for (a, b) in got.iter().zip(want) {
                gap = gap.max((a - b).abs());
            }
        }
        gap
    }

    #[test]
    fn initialization_builds_full_key_mesh() {
        let setup = setup_for(Mode::PartText, 5, 3, 2, 1, 21);
        let mut sim = Simulation::build(&setup).unwrap();
        run_initialization(&mut sim).unwrap();
        for u in &sim.users {
            assert_eq!(u.shared_key_count(), 4);
        }
        // Pairwise symmetry.
        for i in 0..5u32 {
            for j in (i + 1)..5 {
                let a = sim.users[i as usize].shared_key(j).unwrap();
                let b = sim.users[j as usize].shared_key(i).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn honest_iteration_matches_plaintext_oracle() {
        let setup = setup_for(Mode::PartText, 3, 2, 2, 3, 22);
        let run = run_training(&setup).unwrap();
        assert!(run.failure.is_none());
        assert_eq!(run.iterations_completed, 3);
        let gap = oracle_gap(&run, &setup);
        assert!(gap < 1e-4, "oracle gap {gap}");
    }

    #[test]
    fn fulltext_matches_oracle_too() {
        let setup = setup_for(Mode::FullText, 4, 3, 2, 3, 23);
        let run = run_training(&setup).unwrap();
        assert!(run.failure.is_none());
        let gap = oracle_gap(&run, &setup);
        assert!(gap < 1e-4, "oracle gap {gap}");
    }

    #[test]
    fn users_and_server_agree_on_items_bitwise() {
        let setup = setup_for(Mode::PartText, 4, 3, 2, 2, 24);
        let mut sim = Simulation::build(&setup).unwrap();
        run_initialization(&mut sim).unwrap();
        for t in 1..=2 {
            run_iteration(&mut sim, t).unwrap();
        }
        let server_items = sim.server.decoded_items();
        for u in &sim.users {
            let got = u.decoded_items();
            for (a, b) in got.rows().zip(server_items.rows()) {
                assert_eq!(a, b, "decoded item rows must be bit-identical");
            }
        }
    }

    #[test]
    fn determinism_bit_identical_transcripts_and_models() {
        let mut setup = setup_for(Mode::PartText, 4, 3, 2, 2, 25);
        setup.record_payloads = true;
        let a = run_training(&setup).unwrap();
        let b = run_training(&setup).unwrap();
        assert_eq!(transcript_bytes(&a), transcript_bytes(&b));
        assert_eq!(a.user_profiles, b.user_profiles);
        assert_eq!(a.item_matrix, b.item_matrix);
        assert_eq!(a.rmse_trace, b.rmse_trace);
    }

    #[test]
    fn shuffled_delivery_changes_nothing() {
        let base = setup_for(Mode::PartText, 4, 3, 2, 2, 26);
        let run_fifo = run_training(&base).unwrap();
        for seed in 0..3 {
            let mut shuffled = setup_for(Mode::PartText, 4, 3, 2, 2, 26);
            shuffled.delivery = DeliveryOrder::Shuffled { seed };
            let run = run_training(&shuffled).unwrap();
            assert_eq!(run.user_profiles, run_fifo.user_profiles);
            assert_eq!(run.item_matrix, run_fifo.item_matrix);
        }
    }

    #[test]
    fn tampered_aggregate_detected_by_all_users() {
        let mut setup = setup_for(Mode::PartText, 3, 2, 2, 3, 27);
        setup.adversary = AdversaryMode::TamperAggregate {
            item: 0,
            dim: 0,
            delta: 1,
        };
        let run = run_training(&setup).unwrap();
        let failure = run.failure.expect("tamper must be detected");
        assert_eq!(failure.iteration, 1);
        assert_eq!(failure.item(), 0);
        assert_eq!(failure.check(), CheckKind::AggregateCheck);
        assert_eq!(failure.users(), vec![0, 1, 2]);
        assert!(failure
            .failures
            .iter()
            .all(|f| f.check == CheckKind::AggregateCheck));
    }

    #[test]
    fn tampered_decommit_detected_by_other_users() {
        let mut setup = setup_for(Mode::PartText, 3, 2, 2, 3, 28);
        setup.adversary = AdversaryMode::TamperDecommit { user: 1, item: 0 };
        let run = run_training(&setup).unwrap();
        let failure = run.failure.expect("tamper must be detected");
        assert_eq!(failure.check(), CheckKind::CommitmentCheck);
        // Everyone except the originating user 1 sees the bad opening.
        assert_eq!(failure.users(), vec![0, 2]);
    }

    #[test]
    fn dropped_message_aborts_at_server_barrier() {
        use crate::protocol::message::MsgKind;
        let mut setup = setup_for(Mode::PartText, 3, 2, 2, 2, 29);
        setup.adversary = AdversaryMode::DropMessage {
            kind: MsgKind::MaskedMsg,
            user: 2,
        };
        let err = run_training(&setup).unwrap_err();
        assert!(
            matches!(err, ProtocolError::Agg(crate::secure_agg::AggError::ParticipantMismatch { .. })),
            "got {err:?}"
        );
    }

    #[test]
    fn replayed_masked_vector_detected() {
        let mut setup = setup_for(Mode::PartText, 3, 2, 2, 3, 30);
        setup.adversary = AdversaryMode::ReplayMaskedVec { user: 0, item: 0 };
        let run = run_training(&setup).unwrap();
        let failure = run.failure.expect("replay must be detected");
        // First iteration passes (nothing to replay yet); the substitution
        // happens in iteration 2.
        assert_eq!(failure.iteration, 2);
        assert_eq!(failure.check(), CheckKind::AggregateCheck);
    }

    #[test]
    fn adversary_at_later_iteration_reports_that_iteration() {
        let mut setup = setup_for(Mode::PartText, 3, 2, 2, 5, 31);
        setup.adversary = AdversaryMode::ReplayMaskedVec { user: 1, item: 1 };
        let run = run_training(&setup).unwrap();
        assert_eq!(run.iterations_completed, 1);
        assert_eq!(run.failure.unwrap().iteration, 2);
    }

    #[test]
    fn custom_hook_firing_at_iteration_three_is_named_in_the_halt() {
        use crate::transport::TamperAction;
        let setup = setup_for(Mode::PartText, 3, 2, 2, 5, 37);
        let mut sim = Simulation::build(&setup).unwrap();
        sim.bus.install_tamper_fn(Box::new(|_, _, msg| {
            match msg {
                crate::protocol::ProtocolMessage::AggregateBroadcast { item, iter, mut values }
                    if item == 0 && iter == 3 =>
                {
                    values[0] ^= 1;
                    TamperAction::Forward(crate::protocol::ProtocolMessage::AggregateBroadcast {
                        item,
                        iter,
                        values,
                    })
                }
                other => TamperAction::Forward(other),
            }
        }));
        run_initialization(&mut sim).unwrap();
        for t in 1..=2 {
            run_iteration(&mut sim, t).unwrap();
        }
        match run_iteration(&mut sim, 3) {
            Err(IterationError::Verification { record }) => {
                assert_eq!(record.iteration, 3);
                assert_eq!(record.check(), CheckKind::AggregateCheck);
            }
            other => panic!("expected verification failure, got {other:?}"),
        }
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let setup = setup_for(Mode::PartText, 3, 2, 2, 0, 32);
        let run = run_training(&setup).unwrap();
        assert_eq!(run.iterations_completed, 0);
        assert!(run.rmse_trace.is_empty());
        assert!(run.timing.is_empty());
        let want = init_user_profiles(3, 2, 32);
        assert_eq!(run.user_profiles, want);
    }

    #[test]
    fn plaintext_mode_runs_without_messages() {
        let mut setup = setup_for(Mode::Plaintext, 3, 2, 2, 4, 33);
        setup.test = Some(small_ratings(3, 2, 34));
        let run = run_training(&setup).unwrap();
        assert_eq!(run.iterations_completed, 4);
        assert_eq!(run.rmse_trace.len(), 4);
        assert!(run.transcript.is_empty());
        assert!(run.comm.is_empty());
    }

    #[test]
    fn out_of_phase_message_rejected() {
        let setup = setup_for(Mode::PartText, 3, 2, 2, 1, 35);
        let mut sim = Simulation::build(&setup).unwrap();
        run_initialization(&mut sim).unwrap();
        // An aggregate broadcast before any round start is out of phase.
        let msg = crate::protocol::ProtocolMessage::AggregateBroadcast {
            item: 0,
            iter: 1,
            values: vec![0, 0],
        };
        let err = sim.users[0].receive(&msg).unwrap_err();
        assert!(matches!(err, ProtocolError::OutOfPhase { .. }), "got {err:?}");
        let err = sim.server.receive(&msg).unwrap_err();
        assert!(matches!(err, ProtocolError::OutOfPhase { .. }), "got {err:?}");
    }

    #[test]
    fn duplicate_public_key_rejected() {
        let setup = setup_for(Mode::PartText, 2, 2, 2, 1, 36);
        let mut sim = Simulation::build(&setup).unwrap();
        let pk = sim.users[0].public_key_message();
        sim.server.receive(&pk).unwrap();
        let err = sim.server.receive(&pk).unwrap_err();
        assert!(matches!(err, ProtocolError::DuplicateUser(0)), "got {err:?}");
    }
}
