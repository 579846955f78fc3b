//! Saves a model and its materialized form to JSON, reloads both and checks
//! that outputs are unchanged.
//!
//! Usage: `cargo run --example model_io [dir]`

use std::path::PathBuf;

use gresnet::activations::ActivationSpec;
use gresnet::network::{load_materialized, load_model, model_forward, save_materialized, save_model, Model};
use gresnet::param::{init_raw, BlockShape, MaterializeConfig};

fn main() -> gresnet::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    let shape = BlockShape::new(2, vec![6, 2])?;
    let acts = vec![ActivationSpec::new("tanh")?, ActivationSpec::new("relu6")?];
    let model = Model::new(1.0, vec![init_raw(&shape, 1.0, acts, 11)?])?;
    let cfg = MaterializeConfig::default();

    let raw_path = dir.join("gresnet_model.json");
    let mat_path = dir.join("gresnet_materialized.json");
    save_model(&model, &raw_path)?;
    save_materialized(&model.materialize(&cfg)?, &mat_path)?;

    let reloaded = load_model(&raw_path)?;
    assert_eq!(reloaded, model);
    let x = [0.3, -0.8];
    let a = model_forward(&reloaded.materialize(&cfg)?, &x)?;
    let b = model_forward(&load_materialized(&mat_path)?, &x)?;
    assert_eq!(a, b);
    println!("wrote {} and {}", raw_path.display(), mat_path.display());
    println!("f({x:?}) = {a:?} from both files");
    Ok(())
}
