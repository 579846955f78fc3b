//! Runs the backward sweep on one randomly initialized block and prints the
//! constrained parameters.
//!
//! Usage: `cargo run --example materialize_block [seed]`

use gresnet::activations::ActivationSpec;
use gresnet::param::{backward_pass, init_raw, BlockShape, MaterializeConfig};

fn main() -> gresnet::Result<()> {
    let seed = std::env::args().nth(1).map_or(Ok(7), |s| s.parse()).expect("seed must be an integer");
    let shape = BlockShape::new(3, vec![5, 4, 3])?;
    let acts = ["tanh", "silu", "relu"].map(|n| ActivationSpec::new(n).unwrap()).to_vec();
    let raw = init_raw(&shape, 1.0, acts, seed)?;
    let block = backward_pass(&raw, &MaterializeConfig::default())?;

    println!("a = {:?}", block.a);
    println!("b = {:?}", block.b);
    for (l, (c, lam)) in block.c.iter().zip(&block.lambda).enumerate() {
        let act = &block.activations[l];
        println!("layer {} ({act}, S = {}, P = {}):", l + 1, act.s(), act.p());
        println!("  lambda = {lam:?}");
        for (i, row) in c.to_rows().iter().enumerate() {
            println!("  C[{i}] = {row:?}  (|row|_1 = {:.6})", row.iter().map(|v| v.abs()).sum::<f64>());
        }
    }
    Ok(())
}
