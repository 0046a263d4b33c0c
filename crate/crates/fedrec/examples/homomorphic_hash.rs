//! The homomorphic vector hash: signed fixed-point exponents over
//! deterministic generators, the additive homomorphism, and the hash
//! commitment scheme built on top of it.
//!
//! ```sh
//! cargo run --release --example homomorphic_hash
//! ```

use fedrec::crypto::{commit, decommit, hf, setup_group};
use fedrec::fixedpoint::{FixedParams, FixedVec};

fn main() {
    let params = FixedParams::new(10_000_000, 1 << 34, 8).unwrap();
    let group = setup_group(3, b"demo");

    let a = FixedVec::encode(&[1.5, -2.25, 0.75], params).unwrap();
    let b = FixedVec::encode(&[-0.5, 1.25, 0.25], params).unwrap();
    let sum = a.add_mod(&b).unwrap();
    println!("a   encodes to {:?}", a.values());
    println!("b   encodes to {:?}", b.values());
    println!("a+b encodes to {:?} (decodes {:?})", sum.values(), sum.decode());

    let ha = hf(&a, &group).unwrap();
    let hb = hf(&b, &group).unwrap();
    let hsum = hf(&sum, &group).unwrap();
    println!("\nhf(a)        = {}", hex(&ha.to_bytes()));
    println!("hf(b)        = {}", hex(&hb.to_bytes()));
    println!("hf(a)*hf(b)  = {}", hex(&ha.combine(&hb).to_bytes()));
    println!("hf(a+b)      = {}", hex(&hsum.to_bytes()));
    assert_eq!(ha.combine(&hb), hsum);
    println!("homomorphism holds");

    // Commit to a hash, open it, and watch a flipped bit break the opening.
    let randomness = [42u8; 32];
    let c = commit(&ha.to_bytes(), &randomness);
    println!("\ncommitment   = {}", hex(c.as_bytes()));
    println!(
        "opens with the right hash:  {}",
        decommit(&ha.to_bytes(), &c, &randomness)
    );
    let mut tampered = ha.to_bytes();
    tampered[5] ^= 1;
    println!(
        "opens with a tampered hash: {}",
        decommit(&tampered, &c, &randomness)
    );
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
