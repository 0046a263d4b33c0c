//! Experiment runner and report tooling.
//!
//! [`run`] loads a ratings file, trains in the configured mode, and emits
//! two files into the output directory: `report.jsonl` (one JSON record per
//! measurement) and `summary.txt` (human-readable tables shaped like the
//! per-phase timing and communication breakdowns). [`compare`] diffs two
//! reports: per-step time ratios and pointwise RMSE deltas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_ratings, split, DataError, DatasetConfig};
use crate::fixedpoint::{check_sum_bound, FixedParams, FixedPointError};
use crate::mf::HyperParams;
use crate::protocol::message::{CommCell, Direction, MsgKind};
use crate::protocol::{
    run_training, CheckKind, Entity, Mode, ProtocolError, TrainingRun, TrainingSetup,
};
use crate::transport::{AdversaryMode, DeliveryOrder};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("cannot write report to {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("report {path} is not readable: {reason}")]
    BadReport { path: PathBuf, reason: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// Full experiment description; every field lands in the report metadata.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub mode: Mode,
    pub users: u32,
    pub items: u32,
    pub dim: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub iterations: u32,
    pub alpha: u64,
    pub modulus_b: u64,
    pub value_bound: f64,
    pub adversary: AdversaryMode,
    pub master_seed: u64,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub window_bits: u32,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/ratings_synthetic.csv"),
            mode: Mode::PartText,
            users: 100,
            items: 60,
            dim: 16,
            gamma: 0.002,
            lambda: 0.02,
            mu: 0.02,
            iterations: 50,
            alpha: 10_000_000,
            modulus_b: 1 << 34,
            value_bound: 4.0,
            adversary: AdversaryMode::Honest,
            master_seed: 7,
            split_seed: 13,
            test_fraction: 0.2,
            window_bits: 8,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            dim: self.dim,
            gamma: self.gamma,
            lambda: self.lambda,
            mu: self.mu,
            iterations: self.iterations,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.users == 0 || self.items == 0 {
            return Err(ExperimentError::Config(
                "users and items must be >= 1".into(),
            ));
        }
        self.hyper_params()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        FixedParams::new(self.alpha, self.modulus_b, self.users)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(ExperimentError::Config(format!(
                "test_fraction {} outside [0, 1)",
                self.test_fraction
            )));
        }
        if !(1..=16).contains(&self.window_bits) {
            return Err(ExperimentError::Config(format!(
                "window_bits {} outside [1, 16]",
                self.window_bits
            )));
        }
        if self.value_bound <= 0.0 {
            return Err(ExperimentError::Config("value_bound must be > 0".into()));
        }
        Ok(())
    }
}

/// `key = value` config file; `#` starts a comment. Keys match the CLI
/// flag names.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ExperimentError::Config(format!(
                "{}:{}: expected key = value, got {raw:?}",
                path.display(),
                idx + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Applies `key = value` pairs (from a config file or CLI overrides) onto a
/// config. Unknown keys are errors.
pub fn apply_settings(
    cfg: &mut ExperimentConfig,
    settings: &BTreeMap<String, String>,
) -> Result<(), ExperimentError> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
        value
            .parse()
            .map_err(|_| ExperimentError::Config(format!("cannot parse {key} = {value:?}")))
    }
    for (key, value) in settings {
        match key.as_str() {
            "dataset" => cfg.dataset = PathBuf::from(value),
            "mode" => cfg.mode = parse_mode(value)?,
            "users" => cfg.users = parse(key, value)?,
            "items" => cfg.items = parse(key, value)?,
            "dim" => cfg.dim = parse(key, value)?,
            "gamma" => cfg.gamma = parse(key, value)?,
            "lambda" => cfg.lambda = parse(key, value)?,
            "mu" => cfg.mu = parse(key, value)?,
            "iterations" => cfg.iterations = parse(key, value)?,
            "alpha" => cfg.alpha = parse(key, value)?,
            "modulus_b" => cfg.modulus_b = parse(key, value)?,
            "value_bound" => cfg.value_bound = parse(key, value)?,
            "adversary" => cfg.adversary = parse_adversary(value)?,
            "seed" => cfg.master_seed = parse(key, value)?,
            "split_seed" => cfg.split_seed = parse(key, value)?,
            "test_fraction" => cfg.test_fraction = parse(key, value)?,
            "window_bits" => cfg.window_bits = parse(key, value)?,
            "out" => cfg.out_dir = PathBuf::from(value),
            other => {
                return Err(ExperimentError::Config(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
    }
    Ok(())
}

pub fn parse_mode(value: &str) -> Result<Mode, ExperimentError> {
    match value.to_ascii_lowercase().as_str() {
        "parttext" => Ok(Mode::PartText),
        "fulltext" => Ok(Mode::FullText),
        "plaintext" => Ok(Mode::Plaintext),
        other => Err(ExperimentError::Config(format!(
            "unknown mode {other:?} (expected parttext|fulltext|plaintext)"
        ))),
    }
}

/// `honest`, `tamper-agg:k,dim,delta`, `tamper-decommit:user,k`,
/// `drop:commit|masked|decommit,user`, or `replay:user,k`.
pub fn parse_adversary(value: &str) -> Result<AdversaryMode, ExperimentError> {
    let bad = |reason: &str| ExperimentError::Config(format!("adversary {value:?}: {reason}"));
    if value == "honest" {
        return Ok(AdversaryMode::Honest);
    }
    let (name, args) = value
        .split_once(':')
        .ok_or_else(|| bad("expected name:args"))?;
    let parts: Vec<&str> = args.split(',').collect();
    let num = |s: &str| -> Result<u64, ExperimentError> {
        s.trim().parse().map_err(|_| bad("non-numeric argument"))
    };
    match name {
        "tamper-agg" => {
            if parts.len() != 3 {
                return Err(bad("expected tamper-agg:item,dim,delta"));
            }
            Ok(AdversaryMode::TamperAggregate {
                item: num(parts[0])? as u32,
                dim: num(parts[1])? as u32,
                delta: num(parts[2])?,
            })
        }
        "tamper-decommit" => {
            if parts.len() != 2 {
                return Err(bad("expected tamper-decommit:user,item"));
            }
            Ok(AdversaryMode::TamperDecommit {
                user: num(parts[0])? as u32,
                item: num(parts[1])? as u32,
            })
        }
        "drop" => {
            if parts.len() != 2 {
                return Err(bad("expected drop:kind,user"));
            }
            let kind = match parts[0] {
                "commit" => MsgKind::CommitMsg,
                "masked" => MsgKind::MaskedMsg,
                "decommit" => MsgKind::DecommitMsg,
                _ => return Err(bad("kind must be commit|masked|decommit")),
            };
            Ok(AdversaryMode::DropMessage {
                kind,
                user: num(parts[1])? as u32,
            })
        }
        "replay" => {
            if parts.len() != 2 {
                return Err(bad("expected replay:user,item"));
            }
            Ok(AdversaryMode::ReplayMaskedVec {
                user: num(parts[0])? as u32,
                item: num(parts[1])? as u32,
            })
        }
        _ => Err(bad("unknown adversary")),
    }
}

fn adversary_label(mode: &AdversaryMode) -> String {
    match mode {
        AdversaryMode::Honest => "honest".into(),
        AdversaryMode::TamperAggregate { item, dim, delta } => {
            format!("tamper-agg:{item},{dim},{delta}")
        }
        AdversaryMode::TamperDecommit { user, item } => format!("tamper-decommit:{user},{item}"),
        AdversaryMode::DropMessage { kind, user } => format!("drop:{kind:?},{user}"),
        AdversaryMode::ReplayMaskedVec { user, item } => format!("replay:{user},{item}"),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRecord {
    record: String,
    schema: u32,
    mode: String,
    users: u32,
    items: u32,
    dim: usize,
    gamma: f64,
    lambda: f64,
    mu: f64,
    iterations: u32,
    alpha: u64,
    requested_alpha: u64,
    modulus_b: u64,
    requested_modulus_b: u64,
    value_bound: f64,
    adversary: String,
    master_seed: u64,
    split_seed: u64,
    test_fraction: f64,
    window_bits: u32,
    dataset: String,
    train_ratings: usize,
    test_ratings: usize,
    density: f64,
    crate_version: String,
}

#[derive(Debug, Serialize, Deserialize, Clone)]
struct TimingRow {
    record: String,
    iter: u32,
    phase: u8,
    step: u8,
    #[serde(with = "entity_str")]
    entity: EntityTag,
    millis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EntityTag {
    User,
    Server,
}

mod entity_str {
    use super::EntityTag;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tag: &EntityTag, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match tag {
            EntityTag::User => "user",
            EntityTag::Server => "server",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<EntityTag, D::Error> {
        match String::deserialize(d)?.as_str() {
            "user" => Ok(EntityTag::User),
            "server" => Ok(EntityTag::Server),
            other => Err(serde::de::Error::custom(format!("bad entity {other}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IterationTimeRecord {
    record: String,
    iter: u32,
    millis: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RmseRecord {
    record: String,
    iter: u32,
    value: f64,
}

/// Result of one `run` invocation.
#[derive(Debug)]
pub struct RunSummary {
    pub report_path: PathBuf,
    pub summary_path: PathBuf,
    pub selected_users: u32,
    pub selected_items: u32,
    pub density: f64,
    pub alpha_used: u64,
    pub modulus_used: u64,
    pub failure: Option<(u32, u32, CheckKind)>,
    pub final_rmse: Option<f64>,
}

/// Shrinks `alpha` (then raises `B`) until the sum bound holds for the
/// worst-case participant count. Returns the adjusted parameters.
fn adjust_fixed_params(
    alpha: u64,
    modulus: u64,
    users: u32,
    value_bound: f64,
    max_participants: u32,
) -> Result<FixedParams, ExperimentError> {
    let mut alpha = alpha;
    let mut modulus = modulus;
    loop {
        if let Ok(params) = FixedParams::new(alpha, modulus, users) {
            match check_sum_bound(params, value_bound, max_participants) {
                Ok(()) => return Ok(params),
                Err(FixedPointError::SumBoundViolation { .. }) => {}
                Err(e) => return Err(ExperimentError::Config(e.to_string())),
            }
        }
        if alpha > 1_000 {
            alpha /= 10;
        } else if modulus < (1 << 62) {
            modulus <<= 1;
        } else {
            return Err(ExperimentError::Config(format!(
                "cannot satisfy sum bound even at alpha={alpha}, B=2^62"
            )));
        }
    }
}

fn comm_direction_label(direction: Direction) -> &'static str {
    match direction {
        Direction::UserToServer => "user_to_server",
        Direction::ServerToUser => "server_to_user",
    }
}

/// Runs the experiment and writes `report.jsonl` and `summary.txt`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;

    let dataset_cfg = DatasetConfig {
        path: cfg.dataset.clone(),
        max_users: cfg.users,
        max_items: cfg.items,
        test_fraction: cfg.test_fraction,
        split_seed: cfg.split_seed,
    };
    let ratings = load_ratings(&dataset_cfg)?;
    let (train, test) = split(&ratings, &dataset_cfg)?;
    let n = train.users();
    let m = train.items();
    let density = ratings.len() as f64 / (n as f64 * m as f64);

    let max_participants = match cfg.mode {
        Mode::FullText => n,
        _ => (0..m).map(|k| train.rater_count(k)).max().unwrap_or(0),
    };
    let fp = adjust_fixed_params(
        cfg.alpha,
        cfg.modulus_b,
        n,
        cfg.value_bound,
        max_participants,
    )?;

    let mut setup = TrainingSetup::new(cfg.mode, cfg.hyper_params(), fp, train);
    setup.test = Some(test);
    setup.master_seed = cfg.master_seed;
    setup.adversary = cfg.adversary;
    setup.window_bits = cfg.window_bits;
    setup.delivery = DeliveryOrder::Fifo;
    setup.value_bound = cfg.value_bound;

    let run = run_training(&setup)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| ExperimentError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let report_path = cfg.out_dir.join("report.jsonl");
    let summary_path = cfg.out_dir.join("summary.txt");

    let meta = MetaRecord {
        record: "meta".into(),
        schema: REPORT_SCHEMA,
        mode: cfg.mode.to_string(),
        users: n,
        items: m,
        dim: cfg.dim,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
        mu: cfg.mu,
        iterations: cfg.iterations,
        alpha: fp.alpha(),
        requested_alpha: cfg.alpha,
        modulus_b: fp.modulus(),
        requested_modulus_b: cfg.modulus_b,
        value_bound: cfg.value_bound,
        adversary: adversary_label(&cfg.adversary),
        master_seed: cfg.master_seed,
        split_seed: cfg.split_seed,
        test_fraction: cfg.test_fraction,
        window_bits: cfg.window_bits,
        dataset: cfg.dataset.display().to_string(),
        train_ratings: setup.train.len(),
        test_ratings: setup.test.as_ref().map_or(0, |t| t.len()),
        density,
        crate_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_report(&report_path, &meta, &run)?;
    let summary_text = render_summary(&meta, &run);
    std::fs::write(&summary_path, &summary_text).map_err(|source| ExperimentError::Io {
        path: summary_path.clone(),
        source,
    })?;

    Ok(RunSummary {
        report_path,
        summary_path,
        selected_users: n,
        selected_items: m,
        density,
        alpha_used: fp.alpha(),
        modulus_used: fp.modulus(),
        failure: run
            .failure
            .as_ref()
            .map(|f| (f.iteration, f.item(), f.check())),
        final_rmse: run.rmse_trace.last().copied(),
    })
}

fn write_report(
    path: &Path,
    meta: &MetaRecord,
    run: &TrainingRun,
) -> Result<(), ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let mut emit = |value: serde_json::Value| -> Result<(), ExperimentError> {
        serde_json::to_writer(&mut file, &value).map_err(|e| ExperimentError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        file.write_all(b"\n").map_err(io_err)
    };

    emit(serde_json::to_value(meta).expect("meta serializes"))?;
    for row in &run.timing {
        emit(serde_json::json!({
            "record": "timing",
            "iter": row.iter,
            "phase": row.phase,
            "step": row.step,
            "entity": match row.entity {
                Entity::User => "user",
                Entity::Server => "server",
            },
            "millis": row.millis,
        }))?;
    }
    for (idx, millis) in run.iteration_millis.iter().enumerate() {
        emit(serde_json::json!({
            "record": "iteration_time",
            "iter": idx as u32 + 1,
            "millis": millis,
        }))?;
    }
    for (idx, value) in run.rmse_trace.iter().enumerate() {
        emit(serde_json::json!({
            "record": "rmse",
            "iter": idx as u32 + 1,
            "value": value,
        }))?;
    }
    for (cell, counter) in &run.comm {
        emit(serde_json::json!({
            "record": "comm",
            "phase": cell.phase,
            "step": cell.step,
            "direction": comm_direction_label(cell.direction),
            "bytes": counter.bytes,
            "messages": counter.messages,
        }))?;
    }
    if let Some(failure) = &run.failure {
        emit(serde_json::json!({
            "record": "failure",
            "iter": failure.iteration,
            "item": failure.item(),
            "check": format!("{:?}", failure.check()),
            "users": failure.users(),
        }))?;
    }
    Ok(())
}

const STEP_COLUMNS: [(u8, u8); 7] = [(1, 0), (2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2)];

fn render_summary(meta: &MetaRecord, run: &TrainingRun) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "fedrec run summary");
    let _ = writeln!(
        out,
        "mode={} users={} items={} dim={} iterations={} (completed {})",
        meta.mode, meta.users, meta.items, meta.dim, meta.iterations, run.iterations_completed
    );
    let _ = writeln!(
        out,
        "alpha={} modulus_b={} density={:.4} adversary={}",
        meta.alpha, meta.modulus_b, meta.density, meta.adversary
    );
    if meta.alpha != meta.requested_alpha || meta.modulus_b != meta.requested_modulus_b {
        let _ = writeln!(
            out,
            "note: fixed-point parameters adjusted from alpha={} B={} to satisfy the sum bound",
            meta.requested_alpha, meta.requested_modulus_b
        );
    }

    // Average per-iteration compute per (entity, step).
    let mut cells: BTreeMap<(EntityTag, u8, u8), (f64, u32)> = BTreeMap::new();
    for row in &run.timing {
        let entity = match row.entity {
            Entity::User => EntityTag::User,
            Entity::Server => EntityTag::Server,
        };
        let slot = cells.entry((entity, row.phase, row.step)).or_insert((0.0, 0));
        slot.0 += row.millis;
        slot.1 += 1;
    }
    let _ = writeln!(out, "\ncompute per iteration (ms, averaged)");
    let _ = writeln!(
        out,
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "", "Phase1", "P2.0", "P2.1", "P2.2", "P3.0", "P3.1", "P3.2"
    );
    for entity in [EntityTag::User, EntityTag::Server] {
        let mut line = format!(
            "{:<8}",
            match entity {
                EntityTag::User => "user",
                EntityTag::Server => "server",
            }
        );
        for (phase, step) in STEP_COLUMNS {
            match cells.get(&(entity, phase, step)) {
                Some((sum, count)) if *count > 0 => {
                    let _ = write!(line, " {:>8.2}", sum / *count as f64);
                }
                _ => {
                    let _ = write!(line, " {:>8}", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }

    let _ = writeln!(out, "\noutgoing communication totals (bytes)");
    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "", "Phase1", "P2.0", "P2.1", "P2.2", "P3.0", "P3.1", "P3.2"
    );
    for direction in [Direction::UserToServer, Direction::ServerToUser] {
        let mut line = format!("{:<16}", comm_direction_label(direction));
        for (phase, step) in STEP_COLUMNS {
            let cell = CommCell {
                phase,
                step,
                direction,
            };
            match run.comm.get(&cell) {
                Some(counter) => {
                    let _ = write!(line, " {:>10}", counter.bytes);
                }
                None => {
                    let _ = write!(line, " {:>10}", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }

    if !run.rmse_trace.is_empty() {
        let first = run.rmse_trace.first().unwrap();
        let last = run.rmse_trace.last().unwrap();
        let _ = writeln!(out, "\nrmse: first={first:.6} last={last:.6}");
    }
    if !run.iteration_millis.is_empty() {
        let total: f64 = run.iteration_millis.iter().sum();
        let _ = writeln!(
            out,
            "iteration wall time: mean={:.1} ms over {} iterations",
            total / run.iteration_millis.len() as f64,
            run.iteration_millis.len()
        );
    }
    if let Some(failure) = &run.failure {
        let _ = writeln!(
            out,
            "\nVERIFICATION FAILURE at iteration {}: item {} failed {:?} for users {:?}",
            failure.iteration,
            failure.item(),
            failure.check(),
            failure.users()
        );
    }
    out
}

/// A parsed report file.
#[derive(Debug)]
pub struct Report {
    pub meta: MetaSummary,
    timing: Vec<TimingRow>,
    iteration_millis: Vec<(u32, f64)>,
    rmse: Vec<(u32, f64)>,
}

/// The subset of metadata needed for comparisons.
#[derive(Debug, Clone)]
pub struct MetaSummary {
    pub schema: u32,
    pub mode: String,
    pub iterations: u32,
    pub users: u32,
    pub items: u32,
    pub dim: usize,
}

pub fn load_report(path: &Path) -> Result<Report, ExperimentError> {
    let bad = |reason: String| ExperimentError::BadReport {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::open(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut meta = None;
    let mut timing = Vec::new();
    let mut iteration_millis = Vec::new();
    let mut rmse = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| bad(format!("line {}: {e}", idx + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| bad(format!("line {}: {e}", idx + 1)))?;
        match value.get("record").and_then(|r| r.as_str()) {
            Some("meta") => {
                let record: MetaRecord = serde_json::from_value(value)
                    .map_err(|e| bad(format!("meta record: {e}")))?;
                meta = Some(MetaSummary {
                    schema: record.schema,
                    mode: record.mode,
                    iterations: record.iterations,
                    users: record.users,
                    items: record.items,
                    dim: record.dim,
                });
            }
            Some("timing") => {
                let record: TimingRow = serde_json::from_value(value)
                    .map_err(|e| bad(format!("timing record: {e}")))?;
                timing.push(record);
            }
            Some("iteration_time") => {
                let record: IterationTimeRecord = serde_json::from_value(value)
                    .map_err(|e| bad(format!("iteration_time record: {e}")))?;
                iteration_millis.push((record.iter, record.millis));
            }
            Some("rmse") => {
                let record: RmseRecord = serde_json::from_value(value)
                    .map_err(|e| bad(format!("rmse record: {e}")))?;
                rmse.push((record.iter, record.value));
            }
            Some("comm") | Some("failure") => {}
            other => return Err(bad(format!("line {}: bad record {other:?}", idx + 1))),
        }
    }
    let meta = meta.ok_or_else(|| bad("missing meta record".into()))?;
    if meta.schema != REPORT_SCHEMA {
        return Err(ExperimentError::SchemaMismatch(format!(
            "report {} has schema {}, expected {REPORT_SCHEMA}",
            path.display(),
            meta.schema
        )));
    }
    Ok(Report {
        meta,
        timing,
        iteration_millis,
        rmse,
    })
}

/// Comparison of two reports: `b` relative to `a`.
#[derive(Debug)]
pub struct CompareSummary {
    pub iteration_time_ratio: f64,
    pub step_time_ratios: BTreeMap<(String, u8, u8), f64>,
    pub max_rmse_delta: Option<f64>,
    pub within_tolerance: bool,
    pub rendered: String,
}

pub fn compare(
    path_a: &Path,
    path_b: &Path,
    rmse_tol: f64,
    time_ratio_min: f64,
) -> Result<CompareSummary, ExperimentError> {
    let a = load_report(path_a)?;
    let b = load_report(path_b)?;
    if a.meta.schema != b.meta.schema {
        return Err(ExperimentError::SchemaMismatch(
            "reports use different schemas".into(),
        ));
    }

    let mean = |values: &[(u32, f64)]| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64)
        }
    };
    let iteration_time_ratio = match (mean(&a.iteration_millis), mean(&b.iteration_millis)) {
        (Some(ta), Some(tb)) if ta > 0.0 => tb / ta,
        _ => f64::NAN,
    };

    // Mean per (entity, phase, step) on both sides.
    let fold = |rows: &[TimingRow]| -> BTreeMap<(EntityTag, u8, u8), (f64, u32)> {
        let mut cells: BTreeMap<(EntityTag, u8, u8), (f64, u32)> = BTreeMap::new();
        for row in rows {
            let slot = cells
                .entry((row.entity, row.phase, row.step))
                .or_insert((0.0, 0));
            slot.0 += row.millis;
            slot.1 += 1;
        }
        cells
    };
    let cells_a = fold(&a.timing);
    let cells_b = fold(&b.timing);
    let mut step_time_ratios = BTreeMap::new();
    for (key, (sum_a, count_a)) in &cells_a {
        if let Some((sum_b, count_b)) = cells_b.get(key) {
            let mean_a = sum_a / *count_a as f64;
            let mean_b = sum_b / *count_b as f64;
            if mean_a > 0.0 {
                let label = (
                    match key.0 {
                        EntityTag::User => "user".to_string(),
                        EntityTag::Server => "server".to_string(),
                    },
                    key.1,
                    key.2,
                );
                step_time_ratios.insert(label, mean_b / mean_a);
            }
        }
    }

    let max_rmse_delta = if a.rmse.is_empty() && b.rmse.is_empty() {
        None
    } else {
        if a.rmse.len() != b.rmse.len() {
            return Err(ExperimentError::SchemaMismatch(format!(
                "rmse series lengths differ: {} vs {}",
                a.rmse.len(),
                b.rmse.len()
            )));
        }
        Some(
            a.rmse
                .iter()
                .zip(&b.rmse)
                .map(|((_, va), (_, vb))| (va - vb).abs())
                .fold(0.0f64, f64::max),
        )
    };

    let rmse_ok = max_rmse_delta.is_none_or(|delta| delta <= rmse_tol);
    let ratio_ok = iteration_time_ratio.is_nan() || iteration_time_ratio >= time_ratio_min;
    let within_tolerance = rmse_ok && ratio_ok;

    let mut rendered = String::new();
    let _ = writeln!(
        rendered,
        "compare {} ({}) vs {} ({})",
        path_a.display(),
        a.meta.mode,
        path_b.display(),
        b.meta.mode
    );
    let _ = writeln!(
        rendered,
        "iteration time ratio (b/a): {iteration_time_ratio:.3}"
    );
    for ((entity, phase, step), ratio) in &step_time_ratios {
        let _ = writeln!(rendered, "  {entity} P{phase}.{step}: {ratio:.3}");
    }
    match max_rmse_delta {
        Some(delta) => {
            let _ = writeln!(rendered, "max |rmse_a - rmse_b|: {delta:.6}");
        }
        None => {
            let _ = writeln!(rendered, "no rmse series to compare");
        }
    }
    let _ = writeln!(
        rendered,
        "within tolerance: {within_tolerance} (rmse_tol={rmse_tol}, time_ratio_min={time_ratio_min})"
    );

    Ok(CompareSummary {
        iteration_time_ratio,
        step_time_ratios,
        max_rmse_delta,
        within_tolerance,
        rendered,
    })
}
