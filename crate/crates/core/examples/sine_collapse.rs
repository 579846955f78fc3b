//! Trains the default constrained network on `0.5 sin(x)` over `(-2π, 2π)`
//! with SGD and Adam, then compares each fit to the best straight line.
//!
//! Usage: `cargo run --release --example sine_collapse [epochs]`

use gresnet::param::MaterializeConfig;
use gresnet::training::{default_sine_model, linear_fit_oracle, make_sine_dataset, train, OptimizerKind, TrainConfig};

fn main() -> gresnet::Result<()> {
    let epochs = std::env::args().nth(1).map_or(Ok(2000), |s| s.parse()).expect("epochs must be an integer");
    let base = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let data = make_sine_dataset(base.n_points, base.domain, base.amplitude, base.seed)?;
    let best = linear_fit_oracle(base.domain, base.amplitude)?;
    println!("best line: slope {:.6}, intercept {:.6}, mse {:.6}", best.slope, best.intercept, best.loss);

    for (optimizer, lr) in [(OptimizerKind::Adam, 1e-2), (OptimizerKind::Sgd, 1e-2)] {
        let cfg = TrainConfig { optimizer, lr, ..base.clone() };
        let mut model = default_sine_model(cfg.seed)?;
        let h = train(&mut model, &data, &cfg, &MaterializeConfig::default())?;
        let c = h.collapse.expect("finished run has collapse metrics");
        println!(
            "{:>4}: first mse {:.6}, final mse {:.6}, line slope {:.6}, intercept {:.6}, r2 {:.6}, max residual {:.3e}",
            h.optimizer, h.losses[0], h.final_mse, c.slope, c.intercept, c.r2, c.max_residual
        );
    }
    Ok(())
}
