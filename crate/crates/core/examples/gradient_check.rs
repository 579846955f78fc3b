//! Compares the analytic gradient through the backward sweep with central
//! finite differences on every parameter of a small model.
//!
//! Usage: `cargo run --release --example gradient_check`

use gresnet::activations::ActivationSpec;
use gresnet::network::{model_forward, Model};
use gresnet::param::{init_raw, BlockShape, MaterializeConfig};
use gresnet::training::{gradient, mse_loss};

fn loss(model: &Model, xs: &[Vec<f64>], ts: &[Vec<f64>]) -> f64 {
    let mat = model.materialize(&MaterializeConfig::default()).unwrap();
    let pred: Vec<f64> = xs.iter().flat_map(|x| model_forward(&mat, x).unwrap()).collect();
    let target: Vec<f64> = ts.iter().flatten().copied().collect();
    mse_loss(&pred, &target).unwrap()
}

fn main() -> gresnet::Result<()> {
    let shape = BlockShape::new(2, vec![3, 3, 2])?;
    let acts = ["tanh", "gelu", "sigmoid"].map(|n| ActivationSpec::new(n).unwrap()).to_vec();
    let model = Model::new(1.0, vec![init_raw(&shape, 1.0, acts, 5)?])?;
    let xs = vec![vec![1.0, -0.5], vec![-2.0, 0.3], vec![0.7, 1.9]];
    let ts = vec![vec![0.1, 0.0], vec![-0.5, 0.2], vec![0.3, -0.4]];

    let (_, grad) = gradient(&model, &xs, &ts, &MaterializeConfig::default())?;
    let h = 1e-5;
    let base = model.params();
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let shifted = |d: f64| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] += d;
            m.set_params(&p).unwrap();
            loss(&m, &xs, &ts)
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
        println!("{i:>3}: analytic {g:>14.6e} fd {fd:>14.6e} rel {err:.1e}");
    }
    println!("{} parameters, worst relative error {worst:.2e}", grad.len());
    Ok(())
}
