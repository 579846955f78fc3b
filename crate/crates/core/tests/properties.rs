mod common;

use gresnet::activations::catalog;
use gresnet::linalg::Matrix;
use gresnet::lmi::{assemble_lmi, assemble_lmi_summed, verify_block, Tolerances};
use gresnet::network::{model_from_json, model_to_json};
use gresnet::param::{backward_pass, materialize, weighted_norm_rows, MaterializeConfig};
use proptest::prelude::*;

use common::*;

/// 128 cases unless `PROPTEST_CASES` says otherwise.
fn config() -> ProptestConfig {
    if std::env::var_os("PROPTEST_CASES").is_some() {
        ProptestConfig::default()
    } else {
        ProptestConfig { cases: 128, ..ProptestConfig::default() }
    }
}

proptest! {
    #![proptest_config(config())]

    /// Any finite raw vector, however extreme, yields a certified block.
    #[test]
    fn materialization_is_total(seed in 0u64..10_000, scale in prop_oneof![Just(1.0), Just(1e3), Just(1e6)], draws in prop::collection::vec(-1.0f64..1.0, 64)) {
        let mut raw = random_raw_block(seed);
        let mut p = raw.params();
        for (k, v) in p.iter_mut().enumerate() {
            *v = draws[k % draws.len()] * scale;
        }
        raw.set_params(&p).unwrap();
        let block = backward_pass(&raw, &MaterializeConfig::default()).unwrap();
        let r = verify_block(&block, &Tolerances::default());
        let bad: Vec<_> = r.checks.iter().filter(|c| c.violations > 0).collect();
        prop_assert!(r.pass(), "seed {seed} scale {scale}: disc {} eig {} checks {bad:?}", r.max_disc_upper, r.max_eig);
    }

    #[test]
    fn weighted_rows_stay_strictly_inside(rows in 1usize..6, cols in 1usize..6, budget in 1e-3f64..1e3, seed in any::<u64>(), big in any::<bool>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let spread = if big { 1e8 } else { 3.0 };
        let raw = Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut rng, -spread..spread));
        let weights: Vec<f64> = (0..cols).map(|_| rand::Rng::gen_range(&mut rng, 0.1..10.0)).collect();
        let x = weighted_norm_rows(&raw, budget, &weights).unwrap();
        for i in 0..rows {
            let norm: f64 = (0..cols).map(|j| weights[j] * x.get(i, j).abs()).sum();
            prop_assert!(norm < budget, "row {i}: {norm} >= {budget}");
        }
    }

    /// Raising the multiplier floor only adds slack; the sweep re-derives
    /// every dependent quantity and the certificate still holds.
    #[test]
    fn larger_lambda_floor_stays_certified(seed in 0u64..10_000, floor_exp in -8i32..2) {
        let raw = random_raw_block(seed);
        let cfg = MaterializeConfig { lambda_floor: 10f64.powi(floor_exp), ..MaterializeConfig::default() };
        let block = backward_pass(&raw, &cfg).unwrap();
        prop_assert!(block.lambda.iter().flatten().all(|&l| l >= cfg.lambda_floor));
        prop_assert!(verify_block(&block, &Tolerances::default()).pass());
    }

    #[test]
    fn slope_quadratic_form_holds(k in 0usize..64, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let all = catalog();
        let spec = &all[k % all.len()];
        let (l, m) = (spec.l(), spec.m());
        let dv = x - y;
        let ds = spec.eval(x) - spec.eval(y);
        // (σ(x) - σ(y) - m Δ)(L Δ - (σ(x) - σ(y))) >= 0
        let q = (ds - m * dv) * (l * dv - ds);
        prop_assert!(q >= -1e-9 * (1.0 + dv * dv), "{spec} at ({x}, {y}): {q}");
    }

    #[test]
    fn lmi_assembly_routes_agree(seed in 0u64..10_000) {
        let block = backward_pass(&random_raw_block(seed), &MaterializeConfig::default()).unwrap();
        let direct = assemble_lmi(&block).unwrap();
        let summed = assemble_lmi_summed(&block).unwrap();
        prop_assert!(direct.m.is_symmetric());
        prop_assert!(direct.m.max_abs_diff(&summed) <= 1e-9 * (1.0 + direct.m.frobenius_norm()));
    }

    #[test]
    fn model_json_round_trip(seed in 0u64..10_000) {
        let model = random_model(seed);
        let back = model_from_json(&model_to_json(&model).unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }
}

/// The aggregate `G` never goes negative under the row bound, so no
/// clamping happens on initialized blocks.
#[test]
fn g_is_never_clamped_at_init() {
    for seed in 0..1000u64 {
        let raw = random_raw_block(seed);
        let m = materialize(
            &raw.shape,
            raw.lipschitz,
            &raw.activations,
            &raw.w_raw,
            &raw.a_raw,
            &raw.b_raw,
            &MaterializeConfig::default(),
        )
        .unwrap();
        assert_eq!(m.g_clamped, 0, "seed {seed}");
    }
}
