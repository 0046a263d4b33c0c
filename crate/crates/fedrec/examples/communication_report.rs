//! Experiment reports: runs the part-upload and full-upload regimes through
//! the experiment runner, prints the emitted summaries, and diffs the two
//! reports (time ratios and RMSE deltas).
//!
//! ```sh
//! cargo run --release --example communication_report
//! ```

use fedrec::experiment::{compare, run, ExperimentConfig};
use fedrec::protocol::Mode;
use std::path::PathBuf;

fn main() {
    let base = ExperimentConfig {
        dataset: PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/data/ratings_synthetic.csv"
        )),
        users: 30,
        items: 20,
        dim: 8,
        gamma: 0.003,
        iterations: 3,
        ..ExperimentConfig::default()
    };
    let out_root = std::env::temp_dir().join("fedrec-communication-report");

    let mut reports = Vec::new();
    for mode in [Mode::PartText, Mode::FullText] {
        let mut cfg = base.clone();
        cfg.mode = mode;
        cfg.out_dir = out_root.join(mode.to_string());
        let summary = run(&cfg).expect("experiment runs");
        println!(
            "== {mode} ==\n{}",
            std::fs::read_to_string(&summary.summary_path).unwrap()
        );
        reports.push(summary.report_path);
    }

    let diff = compare(&reports[0], &reports[1], 1e-3, 1.0).expect("reports comparable");
    print!("{}", diff.rendered);
    println!(
        "\nmachine-readable reports:\n  {}\n  {}",
        reports[0].display(),
        reports[1].display()
    );
}
