//! The offline optimization: fixed-base windowed tables turn each
//! per-dimension exponentiation into a handful of table lookups and point
//! additions. Table evaluation must agree with the plain hash exactly.
//!
//! ```sh
//! cargo run --release --example offline_tables
//! ```

use fedrec::crypto::{hf, hf_precomputed, precompute_fixed_base, setup_group};
use fedrec::fixedpoint::{FixedParams, FixedVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

fn main() {
    let dim = 100;
    let params = FixedParams::new(10_000_000, 1 << 34, 8).unwrap();
    let group = setup_group(dim, b"offline-demo");

    let build_start = Instant::now();
    let table = precompute_fixed_base(&group, 8).unwrap();
    println!(
        "built window-8 tables for {dim} generators in {:.0} ms",
        build_start.elapsed().as_secs_f64() * 1e3
    );

    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let inputs: Vec<FixedVec> = (0..50)
        .map(|_| {
            FixedVec::from_residues(
                (0..dim).map(|_| rng.random_range(0..(1u64 << 34))).collect(),
                params,
            )
            .unwrap()
        })
        .collect();

    let t0 = Instant::now();
    let slow: Vec<_> = inputs.iter().map(|x| hf(x, &group).unwrap()).collect();
    let plain_ms = t0.elapsed().as_secs_f64() * 1e3 / inputs.len() as f64;

    let t1 = Instant::now();
    let fast: Vec<_> = inputs
        .iter()
        .map(|x| hf_precomputed(x, &table).unwrap())
        .collect();
    let table_ms = t1.elapsed().as_secs_f64() * 1e3 / inputs.len() as f64;

    assert_eq!(slow, fast, "both evaluation paths must agree exactly");
    println!("all {} digests agree exactly", inputs.len());
    println!("plain hf:        {plain_ms:.2} ms per vector");
    println!("precomputed hf:  {table_ms:.2} ms per vector ({:.1}x faster)", plain_ms / table_ms);
}
