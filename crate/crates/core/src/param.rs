//! Closed-form parameterization of a certified residual block.
//!
//! A block computes `x' = A x + B w_n` with the inner chain
//! `w_l = σ_l(C_l w_{l-1} + b_l)`, `w_0 = x`, where `A` and `B` are diagonal.
//! Every trainable quantity is an unconstrained raw value; [`backward_pass`]
//! maps raw values to `(A, B, C_l, Λ_l)` satisfying a set of row-norm,
//! element-wise and multiplier bounds under which every Gershgorin disc of
//! the block's LMI lies in the closed left half-line. The block is then
//! `L`-Lipschitz by construction.
//!
//! The sweep runs from the last layer towards the first because each `Λ_l`
//! depends on `Λ_{l+1}` and `C_{l+1}`, and `C_1`'s element bound depends on
//! `Λ_1`. The cycle between `C_1` and `Λ_1` is broken by the extra row
//! constraint `|S_1| ||C_{1,i}||_1 <= 1`, which makes `Λ_1 >= G_2` sufficient.
//!
//! All routines are generic over [`Scalar`] so the same code yields values
//! (`f64`) or a differentiable trace ([`crate::autodiff::Var`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::autodiff::{sum, Scalar};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Keeps `|tanh|` strictly below one after float saturation so that
/// open-interval budgets stay open.
const SATURATION: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub d_x: usize,
    /// Output widths `[d_1, ..., d_n]`; `d_n` must equal `d_x`.
    pub dims: Vec<usize>,
}

impl BlockShape {
    pub fn new(d_x: usize, dims: Vec<usize>) -> Result<Self> {
        let shape = Self { d_x, dims };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 {
            return Err(Error::Shape("d_x must be positive".into()));
        }
        if self.dims.is_empty() {
            return Err(Error::Shape("a block needs at least one inner layer".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        let last = *self.dims.last().unwrap();
        if last != self.d_x {
            return Err(Error::Shape(format!(
                "last inner width d_n = {last} must equal d_x = {}",
                self.d_x
            )));
        }
        Ok(())
    }

    /// Number of inner layers `n`.
    pub fn n(&self) -> usize {
        self.dims.len()
    }

    /// Input width of layer `k` (0-based), i.e. `d_{k}` in 1-based terms
    /// with `d_0 = d_x`.
    pub fn in_dim(&self, k: usize) -> usize {
        if k == 0 {
            self.d_x
        } else {
            self.dims[k - 1]
        }
    }

    pub fn out_dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// Size of the LMI: `d_x + Σ d_l`.
    pub fn lmi_dim(&self) -> usize {
        self.d_x + self.dims.iter().sum::<usize>()
    }
}

/// Strictness margins used by [`backward_pass`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterializeConfig {
    /// Multiplicative shrink applied to every open-interval budget.
    pub eps: f64,
    /// `|a_i|` is kept in `[δ L, (1 - δ) L]`.
    pub delta: f64,
    pub lambda_floor: f64,
    /// Relative amount by which every multiplier exceeds its lower bound.
    /// Without it the multiplier rows of the LMI touch zero exactly and
    /// rounding can push them a few ulps above. The slack on such a row is
    /// `margin · (2 - |S| ||C_i||_1)` relative to its diagonal, and the
    /// row budget keeps that second factor above `2 eps`, so the margin
    /// should be comparable to `eps`.
    pub lambda_margin: f64,
    /// Element cap on inner layers whose activation has `S = 0` (no row
    /// budget applies there).
    pub zero_s_cap: f64,
}

impl Default for MaterializeConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            delta: 1e-3,
            lambda_floor: 1e-8,
            lambda_margin: 1e-6,
            zero_s_cap: 1e4,
        }
    }
}

/// Unconstrained trainable parameters of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBlock {
    pub shape: BlockShape,
    pub lipschitz: f64,
    pub activations: Vec<ActivationSpec>,
    pub w_raw: Vec<Matrix>,
    pub a_raw: Vec<f64>,
    pub b_raw: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
}

/// Checks shared by [`RawBlock`] and [`MaterializedBlock`].
pub fn validate_activations(shape: &BlockShape, activations: &[ActivationSpec]) -> Result<()> {
    if activations.len() != shape.n() {
        return Err(Error::Shape(format!(
            "{} activations for {} inner layers",
            activations.len(),
            shape.n()
        )));
    }
    activations[0].check_first_layer()
}

fn check_lipschitz(l: f64) -> Result<()> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz bound must be positive and finite, got {l}"
        )));
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: length {got}, expected {want}")));
    }
    Ok(())
}

fn check_finite<'a>(what: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite values")));
    }
    Ok(())
}

impl RawBlock {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        check_lipschitz(self.lipschitz)?;
        validate_activations(&self.shape, &self.activations)?;
        let n = self.shape.n();
        check_len("w_raw", self.w_raw.len(), n)?;
        check_len("biases", self.biases.len(), n)?;
        for k in 0..n {
            let want = (self.shape.out_dim(k), self.shape.in_dim(k));
            if self.w_raw[k].shape() != want {
                return Err(Error::Shape(format!(
                    "w_raw[{k}] is {:?}, expected {want:?}",
                    self.w_raw[k].shape()
                )));
            }
            check_len(&format!("biases[{k}]"), self.biases[k].len(), want.0)?;
            check_finite("w_raw", self.w_raw[k].as_slice())?;
            check_finite("biases", &self.biases[k])?;
        }
        check_len("a_raw", self.a_raw.len(), self.shape.d_x)?;
        check_len("b_raw", self.b_raw.len(), self.shape.d_x)?;
        check_finite("a_raw", &self.a_raw)?;
        check_finite("b_raw", &self.b_raw)?;
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let w: usize = self.w_raw.iter().map(|m| m.rows() * m.cols()).sum();
        let b: usize = self.biases.iter().map(Vec::len).sum();
        w + 2 * self.shape.d_x + b
    }

    /// Flattened parameters: every `w_raw` (row-major, layer order), then
    /// `a_raw`, `b_raw`, then every bias vector.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.w_raw {
            out.extend_from_slice(w.as_slice());
        }
        out.extend_from_slice(&self.a_raw);
        out.extend_from_slice(&self.b_raw);
        for b in &self.biases {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("parameter vector", flat.len(), self.param_count())?;
        let mut at = 0;
        for w in &mut self.w_raw {
            let (r, c) = w.shape();
            *w = Matrix::from_vec(r, c, flat[at..at + r * c].to_vec())?;
            at += r * c;
        }
        let d = self.shape.d_x;
        self.a_raw.copy_from_slice(&flat[at..at + d]);
        at += d;
        self.b_raw.copy_from_slice(&flat[at..at + d]);
        at += d;
        for b in &mut self.biases {
            let len = b.len();
            b.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        Ok(())
    }
}

/// Constrained parameters ready for inference and verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializedBlock {
    pub shape: BlockShape,
    pub lipschitz: f64,
    pub activations: Vec<ActivationSpec>,
    /// Diagonal of `A`.
    pub a: Vec<f64>,
    /// Diagonal of `B`.
    pub b: Vec<f64>,
    pub c: Vec<Matrix>,
    /// Diagonals of `Λ_1..Λ_n`.
    pub lambda: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MaterializedBlock {
    /// Structural consistency only; the certified inequalities are checked
    /// by [`crate::lmi::verify_block`].
    pub fn validate_shapes(&self) -> Result<()> {
        self.shape.validate()?;
        check_lipschitz(self.lipschitz)?;
        validate_activations(&self.shape, &self.activations)?;
        let n = self.shape.n();
        check_len("c", self.c.len(), n)?;
        check_len("lambda", self.lambda.len(), n)?;
        check_len("biases", self.biases.len(), n)?;
        check_len("a", self.a.len(), self.shape.d_x)?;
        check_len("b", self.b.len(), self.shape.d_x)?;
        for k in 0..n {
            let want = (self.shape.out_dim(k), self.shape.in_dim(k));
            if self.c[k].shape() != want {
                return Err(Error::Shape(format!(
                    "c[{k}] is {:?}, expected {want:?}",
                    self.c[k].shape()
                )));
            }
            check_len(&format!("lambda[{k}]"), self.lambda[k].len(), want.0)?;
            check_len(&format!("biases[{k}]"), self.biases[k].len(), want.0)?;
        }
        Ok(())
    }
}

/// Numerator `G` of the multiplier bound for the layer below.
#[derive(Debug, Clone)]
pub struct GVector<T> {
    pub values: Vec<T>,
    /// Entries that were negative before clamping at zero. Under the row
    /// bound this never happens.
    pub clamped: usize,
    /// Smallest value before clamping.
    pub min_unclamped: f64,
}

/// `x_ij = budget / cols / v_j * tanh(raw_ij)`: each row has weighted l1 norm
/// strictly below `budget`.
pub fn weighted_norm_rows<T: Scalar>(raw: &Matrix<T>, budget: f64, weights: &[f64]) -> Result<Matrix<T>> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("budget must be positive, got {budget}")));
    }
    check_len("weights", weights.len(), raw.cols())?;
    if weights.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let share = budget / raw.cols() as f64 * SATURATION;
    Ok(Matrix::from_fn(raw.rows(), raw.cols(), |i, j| {
        raw.get(i, j).tanh() * (share / weights[j])
    }))
}

/// `a_i = sign(tanh(raw_i)) · L · clamp(|tanh(raw_i)|, δ, 1 - δ)`, with
/// `sign(0) = +1`.
pub fn materialize_a<T: Scalar>(a_raw: &[T], lipschitz: f64, delta: f64) -> Vec<T> {
    a_raw
        .iter()
        .map(|&r| {
            let t = r.tanh();
            let sign = if t.value() >= 0.0 { 1.0 } else { -1.0 };
            t.abs().max_c(delta).min_c(1.0 - delta) * (lipschitz * sign)
        })
        .collect()
}

/// `b_i = (1 - ε) tanh(raw_i) (L² - a_i²) / |a_i|`.
pub fn materialize_b<T: Scalar>(b_raw: &[T], a: &[T], lipschitz: f64, eps: f64) -> Result<Vec<T>> {
    check_len("b_raw", b_raw.len(), a.len())?;
    let l2 = lipschitz * lipschitz;
    b_raw
        .iter()
        .zip(a)
        .map(|(&r, &ai)| {
            if ai.value() == 0.0 {
                return Err(Error::Invariant("a_i = 0 in materialize_b".into()));
            }
            let budget = (-(ai * ai) + l2) / ai.abs();
            Ok(r.tanh() * budget * (1.0 - eps))
        })
        .collect()
}

/// Inner-layer weights (`l >= 2`): row l1 norms below `(1 - ε) 2 / |S_l|`.
///
/// With `S_l = 0` there is no row budget; raw values are clipped to
/// `±zero_s_cap` instead.
pub fn materialize_c_inner<T: Scalar>(raw: &Matrix<T>, s: f64, cfg: &MaterializeConfig) -> Result<Matrix<T>> {
    if s == 0.0 {
        let cap = cfg.zero_s_cap;
        return Ok(raw.map(|w| w.max_c(-cap).min_c(cap)));
    }
    let budget = (1.0 - cfg.eps) * 2.0 / s.abs();
    weighted_norm_rows(raw, budget, &vec![1.0; raw.cols()])
}

fn row_l1<T: Scalar>(m: &Matrix<T>, i: usize) -> T {
    sum(m.row(i).iter().map(|c| c.abs()))
}

fn checked_denominator<T: Scalar>(s: f64, c: &Matrix<T>, i: usize, what: &str) -> Result<T> {
    let den = (row_l1(c, i) * -s.abs()) + 2.0;
    if den.value() <= 0.0 || !den.value().is_finite() {
        return Err(Error::Invariant(format!(
            "{what}: row {i} of C violates its row budget (denominator {})",
            den.value()
        )));
    }
    Ok(den)
}

/// `λ_{n,i} = max(floor, (b_i² + |a_i||b_i|) / (2 - |S_n| ||C_{n,i}||_1))`.
pub fn compute_lambda_n<T: Scalar>(a: &[T], b: &[T], s_n: f64, c_n: &Matrix<T>, floor: f64) -> Result<Vec<T>> {
    check_len("b", b.len(), a.len())?;
    check_len("rows of C_n", c_n.rows(), a.len())?;
    (0..a.len())
        .map(|i| {
            let num = b[i] * b[i] + a[i].abs() * b[i].abs();
            let den = checked_denominator(s_n, c_n, i, "lambda_n")?;
            Ok((num / den).max_c(floor))
        })
        .collect()
}

/// `G_i = Σ_j λ_j (|S| |c_ji| - 2 P c_ji²) + 2 |P| Σ_{z≠i} |Q_iz|` with
/// `Q = Cᵀ diag(λ) C`, clamped at zero.
pub fn compute_g<T: Scalar>(lambda_next: &[T], c_next: &Matrix<T>, s_next: f64, p_next: f64) -> Result<GVector<T>> {
    check_len("lambda_next", lambda_next.len(), c_next.rows())?;
    let (rows, cols) = c_next.shape();
    let abs_s = s_next.abs();
    let mut values = Vec::with_capacity(cols);
    let mut clamped = 0;
    let mut min_unclamped = f64::INFINITY;

    // Off-diagonal Q only matters when P != 0.
    let q = if p_next != 0.0 {
        let mut q = Matrix::filled(cols, cols, T::constant(0.0));
        for i in 0..cols {
            for z in i + 1..cols {
                let v = sum((0..rows).map(|j| lambda_next[j] * c_next.get(j, i) * c_next.get(j, z)));
                q.set(i, z, v);
                q.set(z, i, v);
            }
        }
        Some(q)
    } else {
        None
    };

    for i in 0..cols {
        let diag = sum((0..rows).map(|j| {
            let c = c_next.get(j, i);
            lambda_next[j] * (c.abs() * abs_s - c * c * (2.0 * p_next))
        }));
        let g = match &q {
            Some(q) => {
                let off = sum((0..cols).filter(|&z| z != i).map(|z| q.get(i, z).abs()));
                diag + off * (2.0 * p_next.abs())
            }
            None => diag,
        };
        min_unclamped = min_unclamped.min(g.value());
        if g.value() < 0.0 {
            clamped += 1;
        }
        values.push(g.max_c(0.0));
    }
    Ok(GVector {
        values,
        clamped,
        min_unclamped,
    })
}

/// `λ_{l,i} = max(floor, G_i / (2 - |S_l| ||C_{l,i}||_1))`.
pub fn compute_lambda_mid<T: Scalar>(g: &GVector<T>, c_l: &Matrix<T>, s_l: f64, floor: f64) -> Result<Vec<T>> {
    check_len("G", g.values.len(), c_l.rows())?;
    (0..c_l.rows())
        .map(|i| {
            let den = checked_denominator(s_l, c_l, i, "lambda_mid")?;
            Ok((g.values[i] / den).max_c(floor))
        })
        .collect()
}

/// `λ_{1,i} = max(floor, G_{2,i})`, valid once `|S_1| ||C_{1,i}||_1 <= 1`
/// holds, since the true denominator is then at least one.
pub fn compute_lambda_first<T: Scalar>(g2: &GVector<T>, floor: f64) -> Vec<T> {
    g2.values.iter().map(|g| g.max_c(floor)).collect()
}

/// Inputs to [`materialize_c1`] that do not change per element.
#[derive(Debug, Clone, Copy)]
pub struct FirstLayerContext<'a, T> {
    pub s1: f64,
    pub p1: f64,
    pub lambda1: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub lipschitz: f64,
    pub eps: f64,
}

/// First-layer weights: `c_ji = u_ji tanh(raw_ji)` with
/// `u_ji = min((1-ε)/(|S_1| d_x), (L² - a_i² - |a_i||b_i|)|S_1| / (d_1 λ_{1,j} (S_1² + 4|P_1|)))`.
pub fn materialize_c1<T: Scalar>(raw: &Matrix<T>, ctx: &FirstLayerContext<'_, T>) -> Result<Matrix<T>> {
    let (d1, d_x) = raw.shape();
    if ctx.s1 == 0.0 {
        return Err(Error::InvalidArgument("first layer requires S_1 != 0".into()));
    }
    if ctx.p1 > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "first layer requires P_1 <= 0, got {}",
            ctx.p1
        )));
    }
    check_len("lambda_1", ctx.lambda1.len(), d1)?;
    check_len("a", ctx.a.len(), d_x)?;
    check_len("b", ctx.b.len(), d_x)?;
    let l2 = ctx.lipschitz * ctx.lipschitz;
    let abs_s = ctx.s1.abs();
    let row_share = (1.0 - ctx.eps) / (abs_s * d_x as f64);
    // The slack below cancels down to about eps (L² - a²) when b sits at its
    // budget, so the element bound gets the same (1 - eps) shrink.
    let scale = (1.0 - ctx.eps) * abs_s / (d1 as f64 * (ctx.s1 * ctx.s1 + 4.0 * ctx.p1.abs()));
    let slack: Vec<T> = (0..d_x)
        .map(|i| {
            let (a, b) = (ctx.a[i], ctx.b[i]);
            (-(a * a) - a.abs() * b.abs() + l2).max_c(0.0)
        })
        .collect();
    Ok(Matrix::from_fn(d1, d_x, |j, i| {
        let elem = slack[i] * scale / ctx.lambda1[j];
        elem.min_c(row_share) * raw.get(j, i).tanh()
    }))
}

/// Generic materialization result.
#[derive(Debug, Clone)]
pub struct Materialized<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<Matrix<T>>,
    pub lambda: Vec<Vec<T>>,
    /// Total number of `G` entries clamped at zero across layers.
    pub g_clamped: usize,
}

/// The backward sweep over raw values of any [`Scalar`] type.
pub fn materialize<T: Scalar>(
    shape: &BlockShape,
    lipschitz: f64,
    activations: &[ActivationSpec],
    w_raw: &[Matrix<T>],
    a_raw: &[T],
    b_raw: &[T],
    cfg: &MaterializeConfig,
) -> Result<Materialized<T>> {
    shape.validate()?;
    check_lipschitz(lipschitz)?;
    validate_activations(shape, activations)?;
    let n = shape.n();
    check_len("w_raw", w_raw.len(), n)?;
    for (k, w) in w_raw.iter().enumerate() {
        if w.shape() != (shape.out_dim(k), shape.in_dim(k)) {
            return Err(Error::Shape(format!("w_raw[{k}] has shape {:?}", w.shape())));
        }
    }
    let s = |k: usize| activations[k].s();
    let p = |k: usize| activations[k].p();

    // (1) inner weights, last to second layer
    let mut c: Vec<Option<Matrix<T>>> = vec![None; n];
    for k in (1..n).rev() {
        c[k] = Some(materialize_c_inner(&w_raw[k], s(k), cfg)?);
    }

    // (2) diagonal A, B
    let a = materialize_a(a_raw, lipschitz, cfg.delta);
    let b = materialize_b(b_raw, &a, lipschitz, cfg.eps)?;

    let mut lambda: Vec<Vec<T>> = vec![Vec::new(); n];
    let mut g_clamped = 0;
    let widen = |v: Vec<T>| -> Vec<T> { v.into_iter().map(|l| l * (1.0 + cfg.lambda_margin)).collect() };
    if n == 1 {
        // C_1 is both first and last layer; its row constraint makes the
        // last-layer denominator at least one.
        lambda[0] = widen(
            (0..shape.d_x)
                .map(|i| (b[i] * b[i] + a[i].abs() * b[i].abs()).max_c(cfg.lambda_floor))
                .collect(),
        );
    } else {
        // (3) last multiplier
        lambda[n - 1] = widen(compute_lambda_n(&a, &b, s(n - 1), c[n - 1].as_ref().unwrap(), cfg.lambda_floor)?);
        // (4) middle multipliers
        for k in (1..n - 1).rev() {
            let g = compute_g(&lambda[k + 1], c[k + 1].as_ref().unwrap(), s(k + 1), p(k + 1))?;
            g_clamped += g.clamped;
            lambda[k] = widen(compute_lambda_mid(&g, c[k].as_ref().unwrap(), s(k), cfg.lambda_floor)?);
        }
        // (5) first multiplier
        let g2 = compute_g(&lambda[1], c[1].as_ref().unwrap(), s(1), p(1))?;
        g_clamped += g2.clamped;
        lambda[0] = widen(compute_lambda_first(&g2, cfg.lambda_floor));
    }

    // (6) first-layer weights
    let ctx = FirstLayerContext {
        s1: s(0),
        p1: p(0),
        lambda1: &lambda[0],
        a: &a,
        b: &b,
        lipschitz,
        eps: cfg.eps,
    };
    c[0] = Some(materialize_c1(&w_raw[0], &ctx)?);

    Ok(Materialized {
        a,
        b,
        c: c.into_iter().map(Option::unwrap).collect(),
        lambda,
        g_clamped,
    })
}

/// Maps raw parameters to a certified block.
pub fn backward_pass(raw: &RawBlock, cfg: &MaterializeConfig) -> Result<MaterializedBlock> {
    raw.validate()?;
    let m = materialize(
        &raw.shape,
        raw.lipschitz,
        &raw.activations,
        &raw.w_raw,
        &raw.a_raw,
        &raw.b_raw,
        cfg,
    )?;
    Ok(MaterializedBlock {
        shape: raw.shape.clone(),
        lipschitz: raw.lipschitz,
        activations: raw.activations.clone(),
        a: m.a,
        b: m.b,
        c: m.c,
        lambda: m.lambda,
        biases: raw.biases.clone(),
    })
}

/// Kaiming-uniform initialization with unit gain: weights in
/// `±sqrt(3 / fan_in)`, biases in `±1 / sqrt(fan_in)`, `a_raw` and `b_raw`
/// in `(-1, 1)`.
pub fn init_raw(shape: &BlockShape, lipschitz: f64, activations: Vec<ActivationSpec>, seed: u64) -> Result<RawBlock> {
    shape.validate()?;
    check_lipschitz(lipschitz)?;
    validate_activations(shape, &activations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_raw = Vec::with_capacity(shape.n());
    let mut biases = Vec::with_capacity(shape.n());
    for k in 0..shape.n() {
        let fan_in = shape.in_dim(k) as f64;
        let wb = (3.0 / fan_in).sqrt();
        let bb = 1.0 / fan_in.sqrt();
        w_raw.push(Matrix::from_fn(shape.out_dim(k), shape.in_dim(k), |_, _| {
            rng.gen_range(-wb..wb)
        }));
        biases.push((0..shape.out_dim(k)).map(|_| rng.gen_range(-bb..bb)).collect());
    }
    let a_raw = (0..shape.d_x).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b_raw = (0..shape.d_x).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(RawBlock {
        shape: shape.clone(),
        lipschitz,
        activations,
        w_raw,
        a_raw,
        b_raw,
        biases,
    })
}

/// Element bound on inner weights for activations with `P > 0`; infinite
/// otherwise.
pub fn inner_element_bound(s: f64, p: f64) -> f64 {
    if p <= 0.0 || s == 0.0 {
        f64::INFINITY
    } else {
        (s * s + 4.0 * p.abs()) / (2.0 * (p.abs() + p) * s.abs())
    }
}

/// Whether the per-element share of the row budget, `2 / (|S| d)`, is no
/// larger than the element bound.
pub fn row_bound_dominates(s: f64, p: f64, d: usize) -> bool {
    2.0 / (s.abs() * d as f64) <= inner_element_bound(s, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(name: &str) -> ActivationSpec {
        ActivationSpec::new(name).unwrap()
    }

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    const CLOSE: f64 = 1e-9;

    #[test]
    fn weighted_norm_examples() {
        let out = weighted_norm_rows(&m(&[vec![0.0, 0.0, 0.0]]), 2.0, &[1.0; 3]).unwrap();
        assert!(out.as_slice().iter().all(|&x| x == 0.0));

        let out = weighted_norm_rows(&m(&[vec![1e6, -1e6]]), 1.0, &[1.0, 2.0]).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < CLOSE);
        assert!((out.get(0, 1) + 0.25).abs() < CLOSE);
        let norm = out.get(0, 0).abs() + 2.0 * out.get(0, 1).abs();
        assert!(norm < 1.0 && norm > 1.0 - CLOSE);

        let w = 0.5f64.atanh();
        let out = weighted_norm_rows(&m(&[vec![w, w]]), 2.0, &[1.0, 1.0]).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < CLOSE && (out.get(0, 1) - 0.5).abs() < CLOSE);
    }

    #[test]
    fn weighted_norm_rejects_bad_budget() {
        let raw = m(&[vec![1.0]]);
        assert!(weighted_norm_rows(&raw, 0.0, &[1.0]).is_err());
        assert!(weighted_norm_rows(&raw, 1.0, &[0.0]).is_err());
        assert!(weighted_norm_rows(&raw, 1.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn weighted_norm_is_odd() {
        let raw = m(&[vec![0.3, -2.0, 7.0]]);
        let neg = raw.map(|x| -x);
        let a = weighted_norm_rows(&raw, 1.5, &[1.0, 3.0, 0.5]).unwrap();
        let b = weighted_norm_rows(&neg, 1.5, &[1.0, 3.0, 0.5]).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn materialize_a_examples() {
        assert_eq!(materialize_a(&[0.0], 1.0, 1e-3), vec![0.001]);
        let a = materialize_a(&[50.0], 0.5, 1e-3);
        assert!((a[0] - 0.4995).abs() < 1e-15);
        let a = materialize_a(&[(-0.5f64).atanh()], 2.0, 1e-3);
        assert!((a[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn materialize_b_examples() {
        assert_eq!(materialize_b(&[0.0], &[0.3], 1.0, 1e-6).unwrap(), vec![0.0]);
        let b = materialize_b(&[40.0], &[0.4], 0.5, 1e-6).unwrap();
        assert!((b[0] - 0.225).abs() < 1e-6);
        assert!(b[0] < 0.225);
        let a = materialize_a(&[40.0], 0.5, 1e-3);
        let b = materialize_b(&[40.0], &a, 0.5, 1e-6).unwrap();
        assert!(b[0] > 0.0 && b[0] < 2e-3);
        assert!(materialize_b(&[1.0], &[0.0], 1.0, 1e-6).is_err());
    }

    #[test]
    fn c_inner_examples() {
        let cfg = MaterializeConfig::default();
        let zero = materialize_c_inner(&Matrix::zeros(3, 4), 1.0, &cfg).unwrap();
        assert!(zero.as_slice().iter().all(|&x| x == 0.0));

        let big = materialize_c_inner(&Matrix::filled(2, 4, 1e3), 1.01, &cfg).unwrap();
        let expect = (1.0 - 1e-6) * 2.0 / (1.01 * 4.0);
        for &x in big.as_slice() {
            assert!((x - expect).abs() < CLOSE);
        }
        assert!(big.row_l1().iter().all(|&r| r < 2.0 / 1.01));

        let capped = materialize_c_inner(&m(&[vec![3.0, -2e5]]), 0.0, &cfg).unwrap();
        assert_eq!(capped.row(0), &[3.0, -1e4]);
    }

    #[test]
    fn lambda_n_examples() {
        let c = m(&[vec![0.5, -0.5]]);
        let l = compute_lambda_n(&[0.4], &[0.0], 1.0, &c, 1e-8).unwrap();
        assert_eq!(l, vec![1e-8]);
        let l = compute_lambda_n(&[0.4], &[0.1], 1.0, &c, 1e-8).unwrap();
        assert!((l[0] - 0.05).abs() < 1e-15);
        let bad = m(&[vec![1.0, 1.0]]);
        assert!(matches!(
            compute_lambda_n(&[0.4], &[0.1], 1.0, &bad, 1e-8),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn g_examples() {
        let g = compute_g(&[1.0, 2.0], &Matrix::zeros(2, 3), 1.0, -0.5).unwrap();
        assert!(g.values.iter().all(|&x| x == 0.0));

        let g = compute_g(&[1.0], &m(&[vec![0.5, 0.5]]), 1.0, 0.0).unwrap();
        assert_eq!(g.values, vec![0.5, 0.5]);
        assert_eq!(g.clamped, 0);

        // P != 0: diag term plus off-diagonal |Q|.
        let c = m(&[vec![0.2, -0.4]]);
        let (s, p) = (1.0, -0.75);
        let g = compute_g(&[2.0], &c, s, p).unwrap();
        let q01 = 2.0 * 0.2 * -0.4;
        let g0 = 2.0 * (0.2 - 2.0 * p * 0.04) + 2.0 * 0.75 * f64::abs(q01);
        let g1 = 2.0 * (0.4 - 2.0 * p * 0.16) + 2.0 * 0.75 * f64::abs(q01);
        assert!((g.values[0] - g0).abs() < 1e-15);
        assert!((g.values[1] - g1).abs() < 1e-15);
    }

    #[test]
    fn g_clamp_is_counted() {
        // Violates the row budget on purpose: |c| > |S| / (2P).
        let g = compute_g(&[1.0], &m(&[vec![100.0]]), 1.01, 0.01).unwrap();
        assert_eq!(g.clamped, 1);
        assert_eq!(g.values, vec![0.0]);
        assert!(g.min_unclamped < 0.0);
    }

    #[test]
    fn lambda_mid_examples() {
        let gv = |v: Vec<f64>| GVector {
            values: v,
            clamped: 0,
            min_unclamped: 0.0,
        };
        let l = compute_lambda_mid(&gv(vec![0.0]), &m(&[vec![0.3]]), 1.0, 1e-8).unwrap();
        assert_eq!(l, vec![1e-8]);
        let l = compute_lambda_mid(&gv(vec![1.0]), &m(&[vec![0.5, -0.5]]), 1.0, 1e-8).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-15);
        let l = compute_lambda_mid(&gv(vec![3.0]), &m(&[vec![0.0, 0.0]]), 1.0, 1e-8).unwrap();
        assert_eq!(l, vec![1.5]);
    }

    #[test]
    fn lambda_first_examples() {
        let g = GVector {
            values: vec![0.0, 0.3, 0.7],
            clamped: 0,
            min_unclamped: 0.0,
        };
        assert_eq!(compute_lambda_first(&g, 1e-8), vec![1e-8, 0.3, 0.7]);
    }

    #[test]
    fn c1_examples() {
        let ctx = FirstLayerContext {
            s1: 1.0,
            p1: 0.0,
            lambda1: &[1.0, 1.0],
            a: &[0.1],
            b: &[0.0],
            lipschitz: 0.5,
            eps: 1e-6,
        };
        let zero = materialize_c1(&Matrix::zeros(2, 1), &ctx).unwrap();
        assert!(zero.as_slice().iter().all(|&x| x == 0.0));

        let sat = materialize_c1(&Matrix::filled(2, 1, 50.0), &ctx).unwrap();
        for &x in sat.as_slice() {
            assert!((x - 0.12 * (1.0 - 1e-6)).abs() < 1e-12, "{x}");
        }

        // b at its bound drives the element bound for that column to zero.
        let l = 0.5;
        let a = materialize_a(&[50.0], l, 1e-3);
        let b = materialize_b(&[50.0], &a, l, 0.0).unwrap();
        let ctx = FirstLayerContext { a: &a, b: &b, eps: 0.0, ..ctx };
        let c = materialize_c1(&Matrix::filled(2, 1, 1.0), &ctx).unwrap();
        assert!(c.as_slice().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn c1_rejects_bad_first_activation() {
        let base = FirstLayerContext {
            s1: 0.0,
            p1: 0.0,
            lambda1: &[1.0],
            a: &[0.1],
            b: &[0.0],
            lipschitz: 1.0,
            eps: 1e-6,
        };
        assert!(materialize_c1(&Matrix::zeros(1, 1), &base).is_err());
        let pos = FirstLayerContext { s1: 1.01, p1: 0.01, ..base };
        assert!(materialize_c1(&Matrix::zeros(1, 1), &pos).is_err());
    }

    fn zero_raw(shape: BlockShape, acts: &[&str], lipschitz: f64) -> RawBlock {
        let n = shape.n();
        RawBlock {
            w_raw: (0..n).map(|k| Matrix::zeros(shape.out_dim(k), shape.in_dim(k))).collect(),
            biases: (0..n).map(|k| vec![0.0; shape.out_dim(k)]).collect(),
            a_raw: vec![0.0; shape.d_x],
            b_raw: vec![0.0; shape.d_x],
            activations: acts.iter().map(|a| act(a)).collect(),
            lipschitz,
            shape,
        }
    }

    #[test]
    fn all_zero_raw_block() {
        let raw = zero_raw(BlockShape::new(3, vec![4, 5, 3]).unwrap(), &["relu", "tanh", "gelu"], 2.0);
        let cfg = MaterializeConfig::default();
        let blk = backward_pass(&raw, &cfg).unwrap();
        assert!(blk.a.iter().all(|&a| a == cfg.delta * 2.0));
        assert!(blk.b.iter().all(|&b| b == 0.0));
        assert!(blk.c.iter().all(|c| c.as_slice().iter().all(|&x| x == 0.0)));
        assert!(blk.lambda.iter().flatten().all(|&l| l == cfg.lambda_floor * (1.0 + cfg.lambda_margin)));
    }

    #[test]
    fn single_layer_satisfies_every_row_by_substitution() {
        let shape = BlockShape::new(1, vec![1]).unwrap();
        let mut raw = zero_raw(shape, &["relu"], 1.0);
        raw.w_raw[0] = m(&[vec![0.8]]);
        raw.a_raw = vec![0.4];
        raw.b_raw = vec![-0.7];
        let blk = backward_pass(&raw, &MaterializeConfig::default()).unwrap();
        let (a, b, c, lam) = (blk.a[0], blk.b[0], blk.c[0].get(0, 0), blk.lambda[0][0]);
        assert!(a.abs() > 0.0 && a.abs() < 1.0);
        assert!(b.abs() < (1.0 - a * a) / a.abs());
        assert!(c.abs() < 2.0);
        assert!(c.abs() <= 1.0);
        assert!(c.abs() <= (1.0 - a * a - (a * b).abs()) / lam + 1e-15);
        assert!(lam >= (b * b + (a * b).abs()) / (2.0 - c.abs()));
        assert!(lam > 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(BlockShape::new(2, vec![3, 4]).is_err());
        assert!(BlockShape::new(2, vec![]).is_err());
        assert!(BlockShape::new(0, vec![0]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let shape = BlockShape::new(2, vec![8, 2]).unwrap();
        let acts = vec![act("tanh"), act("relu")];
        let r1 = init_raw(&shape, 1.0, acts.clone(), 9).unwrap();
        let r2 = init_raw(&shape, 1.0, acts, 9).unwrap();
        assert_eq!(r1, r2);
        let bound0 = (3.0f64 / 2.0).sqrt();
        assert!(r1.w_raw[0].as_slice().iter().all(|x| x.abs() < bound0));
        let bound1 = (3.0f64 / 8.0).sqrt();
        assert!(r1.w_raw[1].as_slice().iter().all(|x| x.abs() < bound1));
        assert!(r1.biases[1].iter().all(|x| x.abs() < 1.0 / 8f64.sqrt()));
        assert!(r1.a_raw.iter().chain(&r1.b_raw).all(|x| x.abs() < 1.0));
    }

    #[test]
    fn init_rejects_positive_p_first_layer() {
        let shape = BlockShape::new(1, vec![4, 1]).unwrap();
        let err = init_raw(&shape, 1.0, vec![act("leaky_relu"), act("relu")], 0).unwrap_err();
        assert!(matches!(err, Error::InvalidFirstActivation { .. }));
    }

    #[test]
    fn param_round_trip() {
        let shape = BlockShape::new(2, vec![3, 2]).unwrap();
        let mut raw = init_raw(&shape, 1.0, vec![act("tanh"), act("tanh")], 3).unwrap();
        let p = raw.params();
        assert_eq!(p.len(), raw.param_count());
        let shifted: Vec<f64> = p.iter().map(|x| x + 1.0).collect();
        raw.set_params(&shifted).unwrap();
        assert_eq!(raw.params(), shifted);
        assert!(raw.set_params(&p[1..]).is_err());
    }

    #[test]
    fn dominance_over_catalog() {
        for spec in crate::activations::catalog() {
            if spec.p() > 0.0 {
                for d in 1..=64 {
                    assert!(row_bound_dominates(spec.s(), spec.p(), d), "{spec} d={d}");
                }
            }
        }
    }
}
