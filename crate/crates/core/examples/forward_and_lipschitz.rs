//! Builds a three-block model, evaluates it and compares the empirical
//! Lipschitz ratio with the certified bound.
//!
//! Usage: `cargo run --release --example forward_and_lipschitz`

use gresnet::activations::ActivationSpec;
use gresnet::network::{empirical_lipschitz, model_forward, per_block_lipschitz, Model};
use gresnet::param::{init_raw, BlockShape, MaterializeConfig};

fn main() -> gresnet::Result<()> {
    let total = 2.0;
    let blocks = 3;
    let each = per_block_lipschitz(total, blocks);
    let shape = BlockShape::new(4, vec![16, 4])?;
    let acts = vec![ActivationSpec::new("elu")?, ActivationSpec::new("softplus")?];
    let raws = (0..blocks as u64)
        .map(|k| init_raw(&shape, each, acts.clone(), 10 + k))
        .collect::<gresnet::Result<Vec<_>>>()?;
    let model = Model::new(total, raws)?.materialize(&MaterializeConfig::default())?;

    let x = [0.5, -1.0, 2.0, 0.0];
    println!("f({x:?}) = {:?}", model_forward(&model, &x)?);
    println!("per-block bound {each:.6}, total {total}");
    for pairs in [100, 1_000, 10_000] {
        let est = empirical_lipschitz(&model, (-10.0, 10.0), pairs, 1)?;
        println!("{pairs:>6} pairs: max ratio {est:.6} ({:.1}% of the bound)", 100.0 * est / total);
    }
    Ok(())
}
