//! The aggregation round at primitive level: key agreement, input
//! construction, pairwise masking, modular aggregation, and the two
//! verification equalities, for one item and three users.
//!
//! ```sh
//! cargo run --release --example masking_walkthrough
//! ```

use std::collections::BTreeMap;

use fedrec::crypto::{decommit, key_agree, keygen, setup_group, SharedKey};
use fedrec::fixedpoint::{FixedParams, FixedVec};
use fedrec::secure_agg::{
    aggregate, build_input, hash_and_commit, mask, verify_aggregate, ParticipantSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let dim = 4;
    let params = FixedParams::new(10_000_000, 1 << 34, 3).unwrap();
    let group = setup_group(dim, b"walkthrough");
    let mut rng = ChaCha20Rng::seed_from_u64(1);

    // Pairwise Diffie-Hellman mesh for three users.
    let keypairs: Vec<_> = (0..3).map(|_| keygen(&mut rng)).collect();
    let mesh: Vec<BTreeMap<u32, SharedKey>> = (0..3)
        .map(|i| {
            (0..3)
                .filter(|&j| j != i)
                .map(|j| {
                    (
                        j as u32,
                        key_agree(&keypairs[i], &keypairs[j].public_bytes()).unwrap(),
                    )
                })
                .collect()
        })
        .collect();
    println!("shared keys agree: ck(0,1) symmetric = {}", {
        mesh[0][&1] == mesh[1][&0]
    });

    // The item row each user shares, and their private gradients.
    let item_row = [1.2, -0.4, 0.8, 0.1];
    let gradients = [
        [0.05, -0.01, 0.02, 0.00],
        [-0.03, 0.04, 0.00, 0.01],
        [0.01, 0.01, -0.02, -0.03],
    ];
    let participants = ParticipantSet::new(vec![0, 1, 2]).unwrap();

    let mut masked = Vec::new();
    let mut hashes = Vec::new();
    let mut expected = FixedVec::zeros(dim, params);
    for (owner, grad) in gradients.iter().enumerate() {
        let input = build_input(&item_row, grad, 3, params, 0, 1).unwrap();
        expected = expected.add_mod(&input.vec).unwrap();

        let (digest, commitment, r) = hash_and_commit(&input, &group, &mut rng).unwrap();
        assert!(decommit(&digest.to_bytes(), &commitment, &r));
        hashes.push(digest);

        let mv = mask(&input, owner as u32, &participants, &mesh[owner], params).unwrap();
        println!(
            "user {owner}: input {:?} -> masked {:?}",
            input.vec.values(),
            mv.vec.values()
        );
        masked.push(mv);
    }

    // The server sums masked vectors; the pairwise masks cancel.
    let agg = aggregate(&masked, &participants, 0, 1).unwrap();
    assert_eq!(agg, expected);
    println!("\naggregate decodes to {:?}", agg.decode());
    println!(
        "true sum of inputs:   {:?}",
        item_row
            .iter()
            .enumerate()
            .map(|(l, v)| v - gradients.iter().map(|g| g[l]).sum::<f64>())
            .collect::<Vec<_>>()
    );

    // Users verify the announced result against the committed hashes.
    let ok = verify_aggregate(&agg, &hashes, &group).unwrap();
    println!("\nhash product equality holds: {ok}");

    let mut forged = agg.values().to_vec();
    forged[2] ^= 1;
    let forged = FixedVec::from_residues(forged, params).unwrap();
    let caught = !verify_aggregate(&forged, &hashes, &group).unwrap();
    println!("single-bit forgery rejected: {caught}");
}
