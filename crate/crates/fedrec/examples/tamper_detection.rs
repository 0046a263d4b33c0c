//! Fault injection: a compromised server tampers with the aggregation
//! result, a relayed decommit string, or replays a stale masked vector, and
//! the users catch it in the same iteration.
//!
//! ```sh
//! cargo run --release --example tamper_detection
//! ```

use fedrec::fixedpoint::FixedParams;
use fedrec::mf::{HyperParams, RatingMatrix};
use fedrec::protocol::{run_training, Mode, TrainingSetup};
use fedrec::transport::AdversaryMode;

fn main() {
    // 4 users, 3 items, everyone rates everything.
    let entries: Vec<(u32, u32, f64)> = (0..4u32)
        .flat_map(|u| (0..3u32).map(move |k| (u, k, ((u * 3 + k) % 9) as f64 / 2.0 + 0.5)))
        .collect();
    let train = RatingMatrix::from_entries(4, 3, entries).unwrap();
    let hp = HyperParams {
        dim: 4,
        gamma: 0.01,
        lambda: 0.02,
        mu: 0.02,
        iterations: 5,
    };
    let fp = FixedParams::new(10_000_000, 1 << 34, 4).unwrap();

    let attacks = [
        (
            "add 1 to one residue of item 2's aggregate",
            AdversaryMode::TamperAggregate {
                item: 2,
                dim: 0,
                delta: 1,
            },
        ),
        (
            "flip one bit of user 1's relayed decommit randomness",
            AdversaryMode::TamperDecommit { user: 1, item: 0 },
        ),
        (
            "replay user 3's masked vector from the previous iteration",
            AdversaryMode::ReplayMaskedVec { user: 3, item: 1 },
        ),
    ];

    for (label, adversary) in attacks {
        let mut setup = TrainingSetup::new(Mode::PartText, hp, fp, train.clone());
        setup.master_seed = 7;
        setup.adversary = adversary;
        let run = run_training(&setup).unwrap();
        match run.failure {
            Some(failure) => println!(
                "{label}\n  -> detected in iteration {}: item {} failed {:?}, flagged by users {:?}\n",
                failure.iteration,
                failure.item(),
                failure.check(),
                failure.users()
            ),
            None => println!("{label}\n  -> NOT DETECTED (this would be a bug)\n"),
        }
    }

    let mut honest = TrainingSetup::new(Mode::PartText, hp, fp, train);
    honest.master_seed = 7;
    let run = run_training(&honest).unwrap();
    println!(
        "honest control run: {} iterations, failure = {:?}",
        run.iterations_completed,
        run.failure.map(|f| f.iteration)
    );
}
