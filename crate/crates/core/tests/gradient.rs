mod common;

use gresnet::activations::ActivationSpec;
use gresnet::linalg::Matrix;
use gresnet::network::Model;
use gresnet::param::{init_raw, BlockShape, MaterializeConfig, RawBlock};
use gresnet::training::gradient;

use common::*;

/// One ReLU block with every weight and bias zero, so the output is `a ∘ x`.
fn linear_block(d: usize, lipschitz: f64, a_raw: &[f64]) -> Model {
    let shape = BlockShape::new(d, vec![3, d]).unwrap();
    let relu = ActivationSpec::new("relu").unwrap();
    let mut raw: RawBlock = init_raw(&shape, lipschitz, vec![relu.clone(), relu], 0).unwrap();
    raw.w_raw = raw.w_raw.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
    raw.biases = raw.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    raw.a_raw = a_raw.to_vec();
    Model::new(lipschitz, vec![raw]).unwrap()
}

fn a_offset(model: &Model) -> usize {
    model.blocks()[0].w_raw.iter().map(|w| w.rows() * w.cols()).sum()
}

#[test]
fn zero_weight_model_matches_closed_form() {
    let lipschitz = 1.5;
    let a_raw = [0.3, -0.7];
    let model = linear_block(2, lipschitz, &a_raw);
    let xs = vec![vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.5, 0.25]];
    let ts = vec![vec![0.2, 0.1], vec![-0.4, 1.0], vec![0.0, -0.3]];
    let (loss, grad) = gradient(&model, &xs, &ts, &MaterializeConfig::default()).unwrap();

    // loss = mean over samples and coordinates of (a_i x_i - t_i)^2,
    // a_i = L tanh(r_i) inside the clamp.
    let count = (xs.len() * 2) as f64;
    let mut want_loss = 0.0;
    let off = a_offset(&model);
    for i in 0..2 {
        let a = lipschitz * a_raw[i].tanh();
        let da = lipschitz * (1.0 - a_raw[i].tanh().powi(2));
        let mut g = 0.0;
        for (x, t) in xs.iter().zip(&ts) {
            let r = a * x[i] - t[i];
            want_loss += r * r / count;
            g += 2.0 * r * x[i] / count;
        }
        assert!(rel_err(grad[off + i], g * da) < 1e-12, "{} vs {}", grad[off + i], g * da);
    }
    assert!((loss - want_loss).abs() < 1e-14);
    // b multiplies a zero hidden state, so it gets no gradient.
    assert_eq!(grad[off + 2], 0.0);
    assert_eq!(grad[off + 3], 0.0);
}

#[test]
fn clamped_a_gets_zero_gradient() {
    // |tanh(r)| below delta and above 1 - delta both sit on the clamp.
    let model = linear_block(2, 1.0, &[1e-5, 20.0]);
    let (_, grad) = gradient(&model, &[vec![1.0, 1.0]], &[vec![0.5, -0.5]], &MaterializeConfig::default()).unwrap();
    let off = a_offset(&model);
    assert_eq!(grad[off], 0.0);
    assert_eq!(grad[off + 1], 0.0);
    // r = 0 exactly: sign(0) = +1, |.|'(0) = 0, clamp active.
    let model = linear_block(1, 1.0, &[0.0]);
    let (_, grad) = gradient(&model, &[vec![1.0]], &[vec![0.5]], &MaterializeConfig::default()).unwrap();
    assert_eq!(grad[a_offset(&model)], 0.0);
}

#[test]
fn finite_differences_agree_on_random_models() {
    let mut checked = 0;
    let mut agree = 0;
    for seed in 0..12u64 {
        let model = random_model(seed);
        let (xs, ts) = random_batch(model.d_x(), 6, seed + 100);
        let (loss, grad) = gradient(&model, &xs, &ts, &MaterializeConfig::default()).unwrap();
        assert!((loss - batch_loss(&model, &xs, &ts)).abs() <= 1e-12 * loss.max(1.0));
        for i in (0..model.param_count()).step_by(7) {
            if let FdSample::Smooth { value, noise } = finite_difference(&model, i, 1e-5, |m| batch_loss(m, &xs, &ts)) {
                checked += 1;
                if fd_agrees(grad[i], value, noise, 1e-4) {
                    agree += 1;
                }
            }
        }
    }
    assert!(checked > 200);
    assert!(agree as f64 >= 0.95 * checked as f64, "{agree}/{checked}");
}

#[test]
fn gradient_rejects_bad_batches() {
    let model = random_model(3);
    let d = model.d_x();
    let cfg = MaterializeConfig::default();
    assert!(gradient(&model, &[], &[], &cfg).is_err());
    assert!(gradient(&model, &[vec![0.0; d]], &[vec![0.0; d + 1]], &cfg).is_err());
    assert!(gradient(&model, &[vec![0.0; d]], &[], &cfg).is_err());
}
