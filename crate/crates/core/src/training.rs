//! Gradient training through the materialization sweep, and the sine-fit
//! collapse experiment.
//!
//! Gradients are computed in two stages. The block forward and backward
//! passes run in plain `f64` on the materialized parameters, producing
//! adjoints for `A`, `B`, every `C_l` and every bias. Those adjoints then
//! seed a reverse sweep over the recorded materialization, which pulls them
//! back to the raw parameters through the `Λ` recursion and every clamp.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::autodiff::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lmi::{verify_block, Tolerances};
use crate::network::{check_version, model_forward, MaterializedModel, Model, FORMAT_VERSION};
use crate::param::{init_raw, materialize, BlockShape, MaterializeConfig, MaterializedBlock, RawBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub domain: (f64, f64),
    pub amplitude: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("empty or infinite domain ({lo}, {hi})")));
    }
    Ok(())
}

/// `n` inputs uniform over `domain` with targets `amplitude · sin(x)`.
pub fn make_sine_dataset(n: usize, domain: (f64, f64), amplitude: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    check_domain(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<f64> = (0..n).map(|_| rng.gen_range(domain.0..domain.1)).collect();
    let targets = inputs.iter().map(|x| amplitude * x.sin()).collect();
    Ok(Dataset {
        inputs,
        targets,
        domain,
        amplitude,
    })
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Adjoints of a block's materialized parameters.
#[derive(Debug, Clone)]
struct BlockAdjoint {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl BlockAdjoint {
    fn zeros(block: &MaterializedBlock) -> Self {
        Self {
            a: vec![0.0; block.a.len()],
            b: vec![0.0; block.b.len()],
            c: block.c.iter().map(|c| Matrix::zeros(c.rows(), c.cols())).collect(),
            biases: block.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Per-layer `(input, pre-activation)` for one sample.
type Trace = Vec<(Vec<f64>, Vec<f64>)>;

fn forward_traced(block: &MaterializedBlock, x: &[f64]) -> Result<(Vec<f64>, Trace)> {
    let mut trace = Vec::with_capacity(block.c.len());
    let mut u = x.to_vec();
    for ((c, bias), act) in block.c.iter().zip(&block.biases).zip(&block.activations) {
        let z: Vec<f64> = c.matvec(&u)?.iter().zip(bias).map(|(z, b)| z + b).collect();
        let w = z.iter().map(|&v| act.eval(v)).collect();
        trace.push((u, z));
        u = w;
    }
    let out = (0..x.len()).map(|i| block.a[i] * x[i] + block.b[i] * u[i]).collect();
    Ok((out, trace))
}

/// Accumulates parameter adjoints into `adj` and returns `d loss / d x`.
fn backward_traced(
    block: &MaterializedBlock,
    x: &[f64],
    trace: &Trace,
    g_out: &[f64],
    adj: &mut BlockAdjoint,
) -> Vec<f64> {
    let n = block.c.len();
    let w_n: Vec<f64> = {
        let (_, z) = &trace[n - 1];
        z.iter().map(|&v| block.activations[n - 1].eval(v)).collect()
    };
    let mut dx: Vec<f64> = (0..x.len()).map(|i| g_out[i] * block.a[i]).collect();
    for i in 0..x.len() {
        adj.a[i] += g_out[i] * x[i];
        adj.b[i] += g_out[i] * w_n[i];
    }
    let mut dw: Vec<f64> = (0..x.len()).map(|i| g_out[i] * block.b[i]).collect();
    for k in (0..n).rev() {
        let (u, z) = &trace[k];
        let act = &block.activations[k];
        let dz: Vec<f64> = z.iter().zip(&dw).map(|(&z, &g)| g * act.derivative(z)).collect();
        let c = &block.c[k];
        let mut du = vec![0.0; c.cols()];
        for (j, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            adj.biases[k][j] += g;
            for (r, &ur) in u.iter().enumerate() {
                adj.c[k].add_at(j, r, g * ur);
                du[r] += g * c.get(j, r);
            }
        }
        if k == 0 {
            for (d, g) in dx.iter_mut().zip(&du) {
                *d += g;
            }
        } else {
            dw = du;
        }
    }
    dx
}

/// Recorded materialization of one block.
struct TracedBlock<'t> {
    w: Vec<Matrix<Var<'t>>>,
    a_raw: Vec<Var<'t>>,
    b_raw: Vec<Var<'t>>,
    a: Vec<Var<'t>>,
    b: Vec<Var<'t>>,
    c: Vec<Matrix<Var<'t>>>,
    values: MaterializedBlock,
}

fn trace_block<'t>(tape: &'t Tape, raw: &RawBlock, cfg: &MaterializeConfig) -> Result<TracedBlock<'t>> {
    raw.validate()?;
    let w: Vec<Matrix<Var<'t>>> = raw.w_raw.iter().map(|m| m.map(|v| tape.var(v))).collect();
    let a_raw: Vec<Var<'t>> = raw.a_raw.iter().map(|&v| tape.var(v)).collect();
    let b_raw: Vec<Var<'t>> = raw.b_raw.iter().map(|&v| tape.var(v)).collect();
    let m = materialize(&raw.shape, raw.lipschitz, &raw.activations, &w, &a_raw, &b_raw, cfg)?;
    let values = MaterializedBlock {
        shape: raw.shape.clone(),
        lipschitz: raw.lipschitz,
        activations: raw.activations.clone(),
        a: m.a.iter().map(Scalar::value).collect(),
        b: m.b.iter().map(Scalar::value).collect(),
        c: m.c.iter().map(|c| c.map(|v| v.value())).collect(),
        lambda: m.lambda.iter().map(|l| l.iter().map(Scalar::value).collect()).collect(),
        biases: raw.biases.clone(),
    };
    Ok(TracedBlock {
        w,
        a_raw,
        b_raw,
        a: m.a,
        b: m.b,
        c: m.c,
        values,
    })
}

fn pull_back(tape: &Tape, traced: &TracedBlock<'_>, adj: &BlockAdjoint) -> Vec<f64> {
    let mut seeds = Vec::new();
    seeds.extend(traced.a.iter().copied().zip(adj.a.iter().copied()));
    seeds.extend(traced.b.iter().copied().zip(adj.b.iter().copied()));
    for (c, g) in traced.c.iter().zip(&adj.c) {
        seeds.extend(c.as_slice().iter().copied().zip(g.as_slice().iter().copied()));
    }
    let grads = tape.backward(&seeds);
    let at = |v: &Var<'_>| v.index().map_or(0.0, |i| grads[i]);
    let mut out = Vec::new();
    for w in &traced.w {
        out.extend(w.as_slice().iter().map(at));
    }
    out.extend(traced.a_raw.iter().map(at));
    out.extend(traced.b_raw.iter().map(at));
    for b in &adj.biases {
        out.extend_from_slice(b);
    }
    out
}

/// MSE over `(inputs, targets)` and its gradient with respect to every raw
/// parameter, in [`Model::params`] order.
pub fn gradient(model: &Model, inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &MaterializeConfig) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
    }
    let tapes: Vec<Tape> = model.blocks().iter().map(|_| Tape::new()).collect();
    let traced = model
        .blocks()
        .iter()
        .zip(&tapes)
        .map(|(raw, tape)| trace_block(tape, raw, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut adj: Vec<BlockAdjoint> = traced.iter().map(|t| BlockAdjoint::zeros(&t.values)).collect();

    let d = model.d_x();
    let count = (inputs.len() * d) as f64;
    let mut loss = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        if x.len() != d || t.len() != d {
            return Err(Error::Shape(format!("sample width must be {d}")));
        }
        let mut hs = vec![x.clone()];
        let mut traces = Vec::with_capacity(traced.len());
        for tb in &traced {
            let (out, tr) = forward_traced(&tb.values, hs.last().unwrap())?;
            traces.push(tr);
            hs.push(out);
        }
        let y = hs.last().unwrap();
        let mut g: Vec<f64> = y.iter().zip(t).map(|(y, t)| 2.0 * (y - t) / count).collect();
        loss += y.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>();
        for k in (0..traced.len()).rev() {
            g = backward_traced(&traced[k].values, &hs[k], &traces[k], &g, &mut adj[k]);
        }
    }
    loss /= count;

    let mut grad = Vec::with_capacity(model.param_count());
    for ((tape, tb), ad) in tapes.iter().zip(&traced).zip(&adj) {
        grad.extend(pull_back(tape, tb, ad));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

/// Training configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    /// Mini-batch size; `0` or anything at least the dataset size means full batch.
    pub batch: usize,
    pub seed: u64,
    pub n_points: usize,
    pub amplitude: f64,
    pub domain: (f64, f64),
    /// Re-verify the certificate every this many epochs; `0` disables.
    pub verify_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            epochs: 2000,
            batch: 0,
            seed: 42,
            n_points: 1024,
            amplitude: 0.5,
            domain: (-2.0 * PI, 2.0 * PI),
            verify_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidArgument("n_points must be >= 2".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("amplitude must be finite".into()));
        }
        check_domain(self.domain)
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                m: vec![0.0; params],
                v: vec![0.0; params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam { lr, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for i in 0..params.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Least-squares line through a model's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetrics {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub optimizer: String,
    /// Full-dataset MSE at the start of each epoch.
    pub losses: Vec<f64>,
    pub final_mse: f64,
    pub collapse: Option<CollapseMetrics>,
    /// Epoch at which the loss became non-finite.
    pub diverged: Option<usize>,
}

impl TrainingHistory {
    pub fn check(&self) -> Result<()> {
        match self.diverged {
            Some(epoch) => Err(Error::Diverged {
                epoch,
                loss: self.losses.last().copied().unwrap_or(f64::NAN),
            }),
            None => Ok(()),
        }
    }
}

fn as_vectors(xs: &[f64]) -> Vec<Vec<f64>> {
    xs.iter().map(|&x| vec![x]).collect()
}

pub fn dataset_loss(model: &MaterializedModel, data: &Dataset) -> Result<f64> {
    let pred = data
        .inputs
        .iter()
        .map(|&x| model_forward(model, &[x]).map(|y| y[0]))
        .collect::<Result<Vec<_>>>()?;
    mse_loss(&pred, &data.targets)
}

/// Fits a scalar model (`d_x = 1`) to `data`. Divergence stops training
/// early and is reported in [`TrainingHistory::diverged`]; a failed
/// certificate spot check is an error.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig, mcfg: &MaterializeConfig) -> Result<TrainingHistory> {
    cfg.validate()?;
    if model.d_x() != 1 {
        return Err(Error::Shape("sine training needs d_x = 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let inputs = as_vectors(&data.inputs);
    let targets = as_vectors(&data.targets);
    let batch = if cfg.batch == 0 || cfg.batch >= data.len() { data.len() } else { cfg.batch };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = model.params();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.len());
    let mut history = TrainingHistory {
        optimizer: cfg.optimizer.name().to_string(),
        losses: Vec::with_capacity(cfg.epochs),
        final_mse: f64::NAN,
        collapse: None,
        diverged: None,
    };

    'epochs: for epoch in 0..cfg.epochs {
        if batch < data.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = None;
        for chunk in order.chunks(batch) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let ts: Vec<Vec<f64>> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let (loss, grad) = match gradient(model, &xs, &ts, mcfg) {
                Ok(r) => r,
                Err(Error::NonFiniteGradient { .. }) => (f64::NAN, Vec::new()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                history.losses.push(loss);
                history.diverged = Some(epoch);
                break 'epochs;
            }
            if batch == data.len() {
                epoch_loss = Some(loss);
            }
            opt.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        let loss = match epoch_loss {
            Some(l) => l,
            None => dataset_loss(&model.materialize(mcfg)?, data)?,
        };
        history.losses.push(loss);
        if cfg.verify_every > 0 && (epoch + 1) % cfg.verify_every == 0 {
            let mat = model.materialize(mcfg)?;
            for (k, b) in mat.blocks.iter().enumerate() {
                let r = verify_block(b, &Tolerances::default());
                if !r.pass() {
                    return Err(Error::Invariant(format!(
                        "block {k} failed certification after epoch {epoch}"
                    )));
                }
            }
        }
    }

    if history.diverged.is_none() {
        let mat = model.materialize(mcfg)?;
        history.final_mse = dataset_loss(&mat, data)?;
        history.collapse = Some(collapse_metric(&mat, data.domain, CURVE_POINTS)?);
    }
    Ok(history)
}

/// Grid size for output curves.
pub const CURVE_POINTS: usize = 512;

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Least-squares line `y ≈ a x + b`: `(a, b, R², max |residual|)`. A
/// perfectly fitted constant has `R² = 1`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<CollapseMetrics> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidArgument("line fit needs at least three paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("degenerate grid".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut max_residual = 0.0f64;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
        max_residual = max_residual.max(r.abs());
    }
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { if ss_res == 0.0 { 1.0 } else { 0.0 } } else { 1.0 - ss_res / ss_tot };
    Ok(CollapseMetrics {
        slope,
        intercept,
        r2,
        max_residual,
    })
}

/// Line fit of a scalar model's outputs over `points` grid values.
pub fn collapse_metric(model: &MaterializedModel, domain: (f64, f64), points: usize) -> Result<CollapseMetrics> {
    check_domain(domain)?;
    if points < 3 {
        return Err(Error::InvalidArgument("grid needs at least three points".into()));
    }
    if model.d_x() != 1 {
        return Err(Error::Shape("collapse metric needs d_x = 1".into()));
    }
    let xs = linspace(domain.0, domain.1, points);
    let ys = xs
        .iter()
        .map(|&x| model_forward(model, &[x]).map(|y| y[0]))
        .collect::<Result<Vec<_>>>()?;
    fit_line(&xs, &ys)
}

/// `(x, y_pred, y_target)` over the curve grid.
pub fn output_curve(model: &MaterializedModel, domain: (f64, f64), amplitude: f64, points: usize) -> Result<Vec<[f64; 3]>> {
    linspace(domain.0, domain.1, points)
        .into_iter()
        .map(|x| Ok([x, model_forward(model, &[x])?[0], amplitude * x.sin()]))
        .collect()
}

/// Best line against `amplitude · sin(x)` in mean square over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub loss: f64,
}

/// Continuous least squares from closed-form moments of `x`, `sin x` and
/// `x sin x` over `[lo, hi]`.
pub fn linear_fit_oracle(domain: (f64, f64), amplitude: f64) -> Result<LinearFit> {
    check_domain(domain)?;
    let (lo, hi) = domain;
    let w = hi - lo;
    let ex = (lo + hi) / 2.0;
    let ex2 = (hi.powi(3) - lo.powi(3)) / (3.0 * w);
    let es = (lo.cos() - hi.cos()) / w;
    let exs = ((hi.sin() - hi * hi.cos()) - (lo.sin() - lo * lo.cos())) / w;
    let es2 = 0.5 - ((2.0 * hi).sin() - (2.0 * lo).sin()) / (4.0 * w);
    let var_x = ex2 - ex * ex;
    let cov = amplitude * (exs - ex * es);
    let var_y = amplitude * amplitude * (es2 - es * es);
    let slope = cov / var_x;
    let intercept = amplitude * es - slope * ex;
    Ok(LinearFit {
        slope,
        intercept,
        loss: (var_y - cov * cov / var_x).max(0.0),
    })
}

pub fn write_history_csv<W: Write>(mut w: W, losses: &[f64]) -> Result<()> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in losses.iter().enumerate() {
        writeln!(w, "{e},{l}")?;
    }
    Ok(())
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[[f64; 3]]) -> Result<()> {
    writeln!(w, "x,y_pred,y_target")?;
    for [x, y, t] in curve {
        writeln!(w, "{x},{y},{t}")?;
    }
    Ok(())
}

/// Width of the hidden layer in the default sine model.
pub const DEFAULT_HIDDEN: usize = 32;

/// Lipschitz bound of the default sine model, equal to that of `sin(x) / 2`.
pub const DEFAULT_LIPSCHITZ: f64 = 0.5;

/// The default sine-fit network: one block, `d_x = 1`, `dims = [32, 1]`,
/// ReLU in both layers, `L = 1/2`.
pub fn default_sine_model(seed: u64) -> Result<Model> {
    let shape = BlockShape::new(1, vec![DEFAULT_HIDDEN, 1])?;
    let relu = ActivationSpec::new("relu")?;
    let raw = init_raw(&shape, DEFAULT_LIPSCHITZ, vec![relu.clone(), relu], seed)?;
    Model::new(DEFAULT_LIPSCHITZ, vec![raw])
}
