//! Assembles the block LMI, prints its Gershgorin discs and eigenvalues,
//! and runs the per-inequality checklist.
//!
//! Usage: `cargo run --example verify_lmi`

use gresnet::activations::ActivationSpec;
use gresnet::lmi::{assemble_lmi, verify_block, Tolerances};
use gresnet::param::{backward_pass, init_raw, BlockShape, MaterializeConfig};

fn main() -> gresnet::Result<()> {
    let shape = BlockShape::new(2, vec![4, 2])?;
    let acts = vec![ActivationSpec::new("gelu")?, ActivationSpec::new("tanh")?];
    let block = backward_pass(&init_raw(&shape, 2.0, acts, 3)?, &MaterializeConfig::default())?;

    let lmi = assemble_lmi(&block)?;
    println!("LMI is {0}x{0}, blocks start at {1:?}", lmi.dim(), lmi.block_offsets);
    let report = verify_block(&block, &Tolerances::default());
    for d in &report.discs {
        println!("row {:>2}: center {:>12.6e} radius {:>12.6e} upper {:>12.6e}", d.row, d.center, d.radius, d.upper());
    }
    println!("eigenvalues: {:?}", report.eigenvalues);
    for c in &report.checks {
        println!("{:<28} checked {:>3} violations {}", c.name, c.checked, c.violations);
    }
    println!("certified: {}", report.pass());
    Ok(())
}
