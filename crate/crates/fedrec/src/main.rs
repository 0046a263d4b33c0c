//! Experiment runner CLI: `fedrec run` trains and writes reports,
//! `fedrec compare` diffs two reports.
//!
//! Exit codes: 0 success, 2 config error (or out-of-tolerance compare),
//! 3 verification failure detected, 4 protocol abort.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedrec::experiment::{
    self, apply_settings, parse_config_file, ExperimentConfig, ExperimentError,
};

#[derive(Parser)]
#[command(name = "fedrec", version, about = "Verifiable federated matrix factorization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment and emit report files.
    Run(Box<RunArgs>),
    /// Compare two reports: time ratios (b/a) and RMSE deltas.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ratings CSV in MovieLens format.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// parttext | fulltext | plaintext.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    users: Option<u32>,
    #[arg(long)]
    items: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<u64>,
    #[arg(long)]
    modulus_b: Option<u64>,
    #[arg(long)]
    value_bound: Option<f64>,
    /// honest | tamper-agg:k,dim,delta | tamper-decommit:u,k |
    /// drop:kind,u | replay:u,k.
    #[arg(long)]
    adversary: Option<String>,
    /// Master seed for profiles, keys, and commitment randomness.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    window_bits: Option<u32>,
    /// Output directory for report.jsonl and summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        };
        put("dataset", self.dataset.as_ref().map(|p| p.display().to_string()));
        put("mode", self.mode.clone());
        put("users", self.users.map(|v| v.to_string()));
        put("items", self.items.map(|v| v.to_string()));
        put("dim", self.dim.map(|v| v.to_string()));
        put("iterations", self.iterations.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("mu", self.mu.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("modulus_b", self.modulus_b.map(|v| v.to_string()));
        put("value_bound", self.value_bound.map(|v| v.to_string()));
        put("adversary", self.adversary.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("split_seed", self.split_seed.map(|v| v.to_string()));
        put("test_fraction", self.test_fraction.map(|v| v.to_string()));
        put("window_bits", self.window_bits.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        map
    }
}

#[derive(Args)]
struct CompareArgs {
    report_a: PathBuf,
    report_b: PathBuf,
    /// Maximum allowed pointwise |RMSE_a(t) - RMSE_b(t)|.
    #[arg(long, default_value_t = f64::INFINITY)]
    rmse_tol: f64,
    /// Minimum required iteration-time ratio b/a.
    #[arg(long, default_value_t = 0.0)]
    time_ratio_min: f64,
}

fn exit_code_for(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::Config(_)
        | ExperimentError::Data(_)
        | ExperimentError::Io { .. }
        | ExperimentError::BadReport { .. }
        | ExperimentError::SchemaMismatch(_) => 2,
        ExperimentError::Protocol(_) => 4,
    }
}

fn run_command(args: &RunArgs) -> Result<u8, ExperimentError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let settings = parse_config_file(path)?;
        apply_settings(&mut cfg, &settings)?;
    }
    apply_settings(&mut cfg, &args.overrides())?;

    let summary = experiment::run(&cfg)?;
    println!(
        "selected {} users x {} items (density {:.4}), alpha={} B={}",
        summary.selected_users,
        summary.selected_items,
        summary.density,
        summary.alpha_used,
        summary.modulus_used
    );
    println!("report:  {}", summary.report_path.display());
    println!("summary: {}", summary.summary_path.display());
    if let Some(rmse) = summary.final_rmse {
        println!("final rmse: {rmse:.6}");
    }
    if let Some((iter, item, check)) = summary.failure {
        println!("VERIFICATION FAILURE: iteration {iter}, item {item}, {check:?}");
        return Ok(3);
    }
    Ok(0)
}

fn compare_command(args: &CompareArgs) -> Result<u8, ExperimentError> {
    let diff = experiment::compare(
        &args.report_a,
        &args.report_b,
        args.rmse_tol,
        args.time_ratio_min,
    )?;
    print!("{}", diff.rendered);
    Ok(if diff.within_tolerance { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Compare(args) => compare_command(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
