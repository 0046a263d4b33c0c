//! Federated matrix factorization in the plaintext domain: the exact
//! arithmetic baseline every secure run is checked against.
//!
//! ```sh
//! cargo run --release --example plaintext_baseline
//! ```

use fedrec::data::{load_ratings, split, DatasetConfig};
use fedrec::fixedpoint::FixedParams;
use fedrec::mf::HyperParams;
use fedrec::protocol::{run_training, Mode, TrainingSetup};
use std::path::PathBuf;

fn main() {
    let dataset = DatasetConfig {
        path: PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/data/ratings_synthetic.csv"
        )),
        max_users: 100,
        max_items: 60,
        test_fraction: 0.2,
        split_seed: 13,
    };
    let ratings = load_ratings(&dataset).expect("fixture parses");
    println!(
        "loaded {} ratings over {} users x {} items",
        ratings.len(),
        ratings.users(),
        ratings.items()
    );
    let (train, test) = split(&ratings, &dataset).unwrap();
    println!("train/test split: {} / {}", train.len(), test.len());

    let hp = HyperParams {
        dim: 16,
        gamma: 0.002,
        lambda: 0.02,
        mu: 0.02,
        iterations: 30,
    };
    let fp = FixedParams::new(10_000_000, 1 << 34, train.users()).unwrap();
    let mut setup = TrainingSetup::new(Mode::Plaintext, hp, fp, train);
    setup.test = Some(test);
    setup.master_seed = 7;

    let run = run_training(&setup).unwrap();
    println!("\niter  rmse");
    for (i, rmse) in run.rmse_trace.iter().enumerate() {
        if i % 5 == 4 || i == 0 {
            println!("{:>4}  {rmse:.4}", i + 1);
        }
    }
}
