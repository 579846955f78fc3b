//! Prints every supported activation with its slope constants and checks
//! them against sampled difference quotients.
//!
//! Usage: `cargo run --example activation_catalog`

use gresnet::activations::{catalog, numeric_constants, verify_slope_restriction};

fn main() -> gresnet::Result<()> {
    println!("{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}  first layer", "name", "L", "m", "S", "P", "L_hat", "m_hat");
    for spec in catalog() {
        let c = spec.constants();
        let (l_hat, m_hat) = numeric_constants(&spec, (-20.0, 20.0), 1e-4)?;
        let slope = verify_slope_restriction(&spec, 20_000, (-20.0, 20.0), 1)?;
        assert_eq!(slope.violations, 0, "{spec}");
        let first = if spec.check_first_layer().is_ok() { "yes" } else { "no" };
        println!(
            "{:<12} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}  {first}",
            spec.to_string(),
            c.l,
            c.m,
            c.s,
            c.p,
            l_hat,
            m_hat
        );
    }
    Ok(())
}
