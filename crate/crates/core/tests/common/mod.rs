//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use gresnet::activations::{catalog, ActivationSpec};
use gresnet::network::{model_forward, Model};
use gresnet::param::{init_raw, BlockShape, MaterializeConfig, RawBlock};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LIPSCHITZ_CHOICES: [f64; 3] = [0.5, 1.0, 2.0];

/// A random block: `n` in 1..=4, widths in 1..=16, any valid activations.
pub fn random_raw_block(seed: u64) -> RawBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let d_x = rng.gen_range(1..=16);
    let mut dims: Vec<usize> = (0..n - 1).map(|_| rng.gen_range(1..=16)).collect();
    dims.push(d_x);
    let lipschitz = *LIPSCHITZ_CHOICES.choose(&mut rng).unwrap();
    let all = catalog();
    let first: Vec<&ActivationSpec> = all.iter().filter(|a| a.check_first_layer().is_ok()).collect();
    let mut acts = vec![(*first.choose(&mut rng).unwrap()).clone()];
    for _ in 1..n {
        acts.push(all.choose(&mut rng).unwrap().clone());
    }
    let shape = BlockShape::new(d_x, dims).unwrap();
    init_raw(&shape, lipschitz, acts, seed.wrapping_mul(7919).wrapping_add(1)).unwrap()
}

/// Random symmetric matrix of size 1..=8 with entries in [-10, 10].
pub fn random_symmetric(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.gen_range(1..=8);
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-10.0..10.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}

/// Householder reduction to tridiagonal form: `(diagonal, off-diagonal)`.
pub fn tridiagonalize(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| a[i][k]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.clone();
        v[0] -= alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        let mut full = vec![0.0; n];
        for (i, t) in v.iter().enumerate() {
            full[k + 1 + i] = t / vn;
        }
        // a <- H a H with H = I - 2 v vᵀ
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 2.0 * full[i] * full[j]).collect())
            .collect();
        let mul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| x[i][t] * y[t][j]).sum()).collect()).collect()
        };
        a = mul(&mul(&p, &a), &p);
    }
    let d = (0..n).map(|i| a[i][i]).collect();
    let e = (1..n).map(|i| a[i][i - 1]).collect();
    (d, e)
}

/// Number of eigenvalues strictly below `x`, from the signs of the
/// characteristic-polynomial ratios of the leading minors.
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q == 0.0 {
            q = -f64::EPSILON * (x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvalues, ascending, by Sturm-sequence bisection on the tridiagonal form.
pub fn eigenvalues_oracle(a: Vec<Vec<f64>>) -> Vec<f64> {
    let (d, e) = tridiagonalize(a);
    let n = d.len();
    let mut bound = 0.0f64;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        bound = bound.max(d[i].abs() + r);
    }
    let bound = bound + 1.0;
    (0..n)
        .map(|k| {
            let (mut lo, mut hi) = (-bound, bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if sturm_count(&d, &e, mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// MSE of the model over a batch, computed through the public inference path.
pub fn batch_loss(model: &Model, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mat = model.materialize(&MaterializeConfig::default()).unwrap();
    let mut total = 0.0;
    let mut count = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let y = model_forward(&mat, x).unwrap();
        for (a, b) in y.iter().zip(t) {
            total += (a - b) * (a - b);
            count += 1.0;
        }
    }
    total / count
}

pub enum FdSample {
    /// Central difference and its rounding-error bound `4 eps |f| / h`.
    Smooth { value: f64, noise: f64 },
    Kink,
}

/// Central difference of `loss` in coordinate `i`; a coordinate whose
/// one-sided differences disagree is reported as a kink.
pub fn finite_difference(model: &Model, i: usize, h: f64, loss: impl Fn(&Model) -> f64) -> FdSample {
    let base = model.params();
    let eval = |delta: f64| {
        let mut m = model.clone();
        let mut p = base.clone();
        p[i] += delta;
        m.set_params(&p).unwrap();
        loss(&m)
    };
    let (fp, f0, fm) = (eval(h), eval(0.0), eval(-h));
    let central = (fp - fm) / (2.0 * h);
    let fwd = (fp - f0) / h;
    let bwd = (f0 - fm) / h;
    if (fwd - bwd).abs() > 1e-3 * central.abs().max(1e-6) {
        FdSample::Kink
    } else {
        let noise = 4.0 * f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / h;
        FdSample::Smooth { value: central, noise }
    }
}

/// Relative error with a small floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Agreement within relative tolerance `tol`, or within the difference
/// quotient's own rounding error when the gradient is too small to resolve.
pub fn fd_agrees(grad: f64, fd: f64, noise: f64, tol: f64) -> bool {
    rel_err(grad, fd) <= tol || (grad - fd).abs() <= noise
}

/// Random model for gradient checks: 1 or 2 blocks of a random shape.
pub fn random_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let blocks = rng.gen_range(1..=2);
    let first = random_raw_block(seed);
    let mut raws = vec![first.clone()];
    for k in 1..blocks {
        raws.push(init_raw(&first.shape, first.lipschitz, first.activations.clone(), seed + 31 * k as u64).unwrap());
    }
    Model::new(first.lipschitz, raws).unwrap()
}

pub fn random_batch(d: usize, count: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..count).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let ts = (0..count).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (xs, ts)
}
