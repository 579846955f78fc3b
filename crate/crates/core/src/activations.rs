//! Element-wise activations and their slope constants.
//!
//! Every supported activation is slope-restricted: for all `v != v'`,
//! `(σ(v) - σ(v')) / (v - v')` lies in `[m, L]`. The certified block
//! parameterization only needs the pair `(L, m)` through `S = L + m` and
//! `P = L * m`.
//!
//! Constants use PyTorch default parameters. Two rows are valid envelopes
//! rather than sharp bounds:
//! - `sigmoid` uses `L = 1` although `sup σ' = 1/4`;
//! - `mish` uses `(L, m) = (1.199678640, -0.2157287822)` while the sharp
//!   range of the standard Mish slope is about `(1.08850, -0.11253)`.
//!
//! `S` and `P` are always computed from `L` and `m`.
//!
//! Hardshrink and RReLU are rejected: their constants are infinite.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI, SQRT_2};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
const SILU_L: f64 = 1.099_839_320;
const SILU_M: f64 = -0.099_839_320_13;
const MISH_L: f64 = 1.199_678_640;
const MISH_M: f64 = -0.215_728_782_2;

/// Slope constants of an activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeConstants {
    /// Largest slope.
    pub l: f64,
    /// Smallest slope.
    pub m: f64,
    /// `L + m`.
    pub s: f64,
    /// `L * m`.
    pub p: f64,
}

impl SlopeConstants {
    fn new(l: f64, m: f64) -> Self {
        Self {
            l,
            m,
            s: l + m,
            p: l * m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Elu { alpha: f64 },
    Celu { alpha: f64 },
    Selu,
    Gelu,
    Hardsigmoid,
    Hardswish,
    Hardtanh,
    LeakyRelu { alpha: f64 },
    Prelu { alpha: f64 },
    LogSigmoid,
    Relu,
    Relu6,
    Sigmoid,
    Silu,
    Softplus,
    Mish,
    Softshrink { lambda: f64 },
    Softsign,
    Tanh,
    Tanhshrink,
    Threshold { threshold: f64 },
}

/// A supported activation with its constants resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationDef", into = "ActivationDef")]
pub struct ActivationSpec {
    name: String,
    params: BTreeMap<String, f64>,
    kind: Kind,
    constants: SlopeConstants,
}

/// Serialized form: `{"name": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl TryFrom<ActivationDef> for ActivationSpec {
    type Error = Error;
    fn try_from(def: ActivationDef) -> Result<Self> {
        ActivationSpec::with_params(&def.name, &def.params)
    }
}

impl From<ActivationSpec> for ActivationDef {
    fn from(spec: ActivationSpec) -> Self {
        ActivationDef {
            name: spec.name,
            params: spec.params,
        }
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        if !self.params.is_empty() {
            let parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", parts.join(", "))?;
        }
        Ok(())
    }
}

/// Canonical names of every activation that can be constructed.
pub const SUPPORTED: &[&str] = &[
    "elu",
    "hardsigmoid",
    "hardtanh",
    "hardswish",
    "leaky_relu",
    "logsigmoid",
    "prelu",
    "relu",
    "relu6",
    "selu",
    "celu",
    "gelu",
    "sigmoid",
    "silu",
    "softplus",
    "mish",
    "softshrink",
    "softsign",
    "tanh",
    "tanhshrink",
    "threshold",
];

const INFINITE: &[&str] = &["hardshrink", "rrelu"];
const NORMALIZATIONS: &[&str] = &[
    "batchnorm",
    "batchnorm1d",
    "layernorm",
    "groupnorm",
    "instancenorm",
    "normalization",
];

fn canonical(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace(['-', ' '], "_")
}

fn squashed(name: &str) -> String {
    canonical(name).replace('_', "")
}

fn take_param(
    params: &BTreeMap<String, f64>,
    allowed: &[(&str, f64)],
    name: &str,
) -> Result<Vec<f64>> {
    for key in params.keys() {
        if !allowed.iter().any(|(k, _)| k == key) {
            return Err(Error::InvalidActivationParam(format!(
                "`{name}` does not take parameter `{key}`"
            )));
        }
    }
    allowed
        .iter()
        .map(|(k, default)| {
            let v = params.get(*k).copied().unwrap_or(*default);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidActivationParam(format!(
                    "`{name}` parameter `{k}` must be finite"
                )))
            }
        })
        .collect()
}

impl ActivationSpec {
    /// Activation with default parameters.
    pub fn new(name: &str) -> Result<Self> {
        Self::with_params(name, &BTreeMap::new())
    }

    pub fn with_params(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let key = squashed(name);
        if INFINITE.iter().any(|n| squashed(n) == key) {
            return Err(Error::InfiniteConstants(canonical(name)));
        }
        if NORMALIZATIONS.iter().any(|n| *n == key) || key.ends_with("norm") {
            return Err(Error::NormalizationRejected(canonical(name)));
        }
        let canon = SUPPORTED
            .iter()
            .find(|n| squashed(n) == key)
            .ok_or_else(|| Error::UnknownActivation(name.to_string()))?;

        let kind = match *canon {
            "elu" => {
                let alpha = take_param(params, &[("alpha", 1.0)], canon)?[0];
                if alpha < 0.0 {
                    return Err(Error::InvalidActivationParam("elu alpha must be >= 0".into()));
                }
                Kind::Elu { alpha }
            }
            "celu" => {
                let alpha = take_param(params, &[("alpha", 1.0)], canon)?[0];
                if alpha <= 0.0 {
                    return Err(Error::InvalidActivationParam("celu alpha must be > 0".into()));
                }
                Kind::Celu { alpha }
            }
            "leaky_relu" => Kind::LeakyRelu {
                alpha: take_param(params, &[("alpha", 0.01)], canon)?[0],
            },
            "prelu" => Kind::Prelu {
                alpha: take_param(params, &[("alpha", 0.25)], canon)?[0],
            },
            "softshrink" => {
                let lambda = take_param(params, &[("lambda", 0.5)], canon)?[0];
                if lambda < 0.0 {
                    return Err(Error::InvalidActivationParam(
                        "softshrink lambda must be >= 0".into(),
                    ));
                }
                Kind::Softshrink { lambda }
            }
            "threshold" => {
                let v = take_param(params, &[("threshold", 0.0), ("value", 0.0)], canon)?;
                // y = x above the threshold, `value` below: only continuous
                // (and hence slope-restricted) when value == threshold.
                if v[0] != v[1] {
                    return Err(Error::InfiniteConstants(format!(
                        "threshold(threshold={}, value={})",
                        v[0], v[1]
                    )));
                }
                Kind::Threshold { threshold: v[0] }
            }
            other => {
                take_param(params, &[], other)?;
                match other {
                    "selu" => Kind::Selu,
                    "gelu" => Kind::Gelu,
                    "hardsigmoid" => Kind::Hardsigmoid,
                    "hardswish" => Kind::Hardswish,
                    "hardtanh" => Kind::Hardtanh,
                    "logsigmoid" => Kind::LogSigmoid,
                    "relu" => Kind::Relu,
                    "relu6" => Kind::Relu6,
                    "sigmoid" => Kind::Sigmoid,
                    "silu" => Kind::Silu,
                    "softplus" => Kind::Softplus,
                    "mish" => Kind::Mish,
                    "softsign" => Kind::Softsign,
                    "tanh" => Kind::Tanh,
                    "tanhshrink" => Kind::Tanhshrink,
                    _ => unreachable!("every SUPPORTED name is matched"),
                }
            }
        };

        let mut stored = BTreeMap::new();
        for (k, v) in params {
            stored.insert(k.clone(), *v);
        }
        Ok(Self {
            name: canon.to_string(),
            params: stored,
            kind,
            constants: kind.constants(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn constants(&self) -> SlopeConstants {
        self.constants
    }

    pub fn l(&self) -> f64 {
        self.constants.l
    }

    pub fn m(&self) -> f64 {
        self.constants.m
    }

    pub fn s(&self) -> f64 {
        self.constants.s
    }

    pub fn p(&self) -> f64 {
        self.constants.p
    }

    /// Whether this activation may sit in the first inner layer: the
    /// first-layer element bound needs `P <= 0` and carries `|S|` as a
    /// factor, so `S == 0` would force the layer to zero.
    pub fn check_first_layer(&self) -> Result<()> {
        if self.p() > 0.0 {
            return Err(Error::InvalidFirstActivation {
                name: self.to_string(),
                reason: format!("requires L*m <= 0, got P = {}", self.p()),
            });
        }
        if self.s() == 0.0 {
            return Err(Error::InvalidFirstActivation {
                name: self.to_string(),
                reason: "requires L+m != 0".into(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kind.eval(x)
    }

    /// Derivative, taking the right-hand slope at kinks.
    pub fn derivative(&self, x: f64) -> f64 {
        self.kind.derivative(x)
    }
}

/// `(L, m, S, P)` for a named activation.
pub fn activation_constants(name: &str, params: &BTreeMap<String, f64>) -> Result<SlopeConstants> {
    Ok(ActivationSpec::with_params(name, params)?.constants())
}

/// Every finite-constant activation with its default parameters.
pub fn catalog() -> Vec<ActivationSpec> {
    SUPPORTED
        .iter()
        .map(|n| ActivationSpec::new(n).expect("catalog names are valid"))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

impl Kind {
    fn constants(self) -> SlopeConstants {
        let (l, m) = match self {
            Kind::Elu { alpha } => (alpha.max(1.0), 0.0),
            Kind::Celu { .. } => (1.0, 0.0),
            Kind::Selu => (SELU_ALPHA * SELU_SCALE, 0.0),
            Kind::Gelu => {
                let c = 1.0 / (E * PI.sqrt());
                (
                    0.5 * (libm::erf(1.0) + 1.0) + c,
                    0.5 * libm::erfc(1.0) - c,
                )
            }
            Kind::Hardsigmoid => (1.0 / 6.0, 0.0),
            Kind::Hardswish => (1.5, -0.5),
            Kind::LeakyRelu { alpha } | Kind::Prelu { alpha } => (alpha.max(1.0), alpha.min(1.0)),
            Kind::Silu => (SILU_L, SILU_M),
            Kind::Mish => (MISH_L, MISH_M),
            Kind::Hardtanh
            | Kind::LogSigmoid
            | Kind::Relu
            | Kind::Relu6
            | Kind::Sigmoid
            | Kind::Softplus
            | Kind::Softshrink { .. }
            | Kind::Softsign
            | Kind::Tanh
            | Kind::Tanhshrink
            | Kind::Threshold { .. } => (1.0, 0.0),
        };
        SlopeConstants::new(l, m)
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Kind::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            Kind::Celu { alpha } => x.max(0.0) + (alpha * (x / alpha).exp_m1()).min(0.0),
            Kind::Selu => {
                SELU_SCALE
                    * if x > 0.0 {
                        x
                    } else {
                        SELU_ALPHA * x.exp_m1()
                    }
            }
            Kind::Gelu => x * std_normal_cdf(x),
            Kind::Hardsigmoid => (x / 6.0 + 0.5).clamp(0.0, 1.0),
            Kind::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
            Kind::Hardtanh => x.clamp(-1.0, 1.0),
            Kind::LeakyRelu { alpha } | Kind::Prelu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Kind::LogSigmoid => -softplus(-x),
            Kind::Relu => x.max(0.0),
            Kind::Relu6 => x.clamp(0.0, 6.0),
            Kind::Sigmoid => sigmoid(x),
            Kind::Silu => x * sigmoid(x),
            Kind::Softplus => softplus(x),
            Kind::Mish => x * softplus(x).tanh(),
            Kind::Softshrink { lambda } => {
                if x > lambda {
                    x - lambda
                } else if x < -lambda {
                    x + lambda
                } else {
                    0.0
                }
            }
            Kind::Softsign => x / (1.0 + x.abs()),
            Kind::Tanh => x.tanh(),
            Kind::Tanhshrink => x - x.tanh(),
            Kind::Threshold { threshold } => {
                if x > threshold {
                    x
                } else {
                    threshold
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Kind::Elu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            Kind::Celu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    (x / alpha).exp()
                }
            }
            Kind::Selu => {
                if x >= 0.0 {
                    SELU_SCALE
                } else {
                    SELU_SCALE * SELU_ALPHA * x.exp()
                }
            }
            Kind::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Kind::Hardsigmoid => {
                if (-3.0..3.0).contains(&x) {
                    1.0 / 6.0
                } else {
                    0.0
                }
            }
            Kind::Hardswish => {
                if x < -3.0 {
                    0.0
                } else if x >= 3.0 {
                    1.0
                } else {
                    (2.0 * x + 3.0) / 6.0
                }
            }
            Kind::Hardtanh => {
                if (-1.0..1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::LeakyRelu { alpha } | Kind::Prelu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Kind::LogSigmoid => sigmoid(-x),
            Kind::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Relu6 => {
                if (0.0..6.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Kind::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Kind::Softplus => sigmoid(x),
            Kind::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
            Kind::Softshrink { lambda } => {
                if x >= lambda || x < -lambda {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Kind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Kind::Tanhshrink => {
                let t = x.tanh();
                t * t
            }
            Kind::Threshold { threshold } => {
                if x >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Outcome of a sampled slope-restriction check.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    pub pairs: usize,
    pub violations: usize,
    pub min_quotient: f64,
    pub max_quotient: f64,
}

/// Absolute slack on quotient containment; difference quotients straddling a
/// kink carry rounding of this order.
pub const SLOPE_TOL: f64 = 1e-6;

/// Samples `sample_count` points uniformly in `domain` and checks every
/// consecutive pair's difference quotient against `[m, L]`.
pub fn verify_slope_restriction(
    spec: &ActivationSpec,
    sample_count: usize,
    domain: (f64, f64),
    seed: u64,
) -> Result<SlopeReport> {
    let (lo, hi) = domain;
    if sample_count < 2 {
        return Err(Error::InvalidArgument("sample_count must be >= 2".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "domain [{lo}, {hi}] must be finite and non-empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..sample_count).map(|_| rng.gen_range(lo..hi)).collect();
    let c = spec.constants();
    let mut report = SlopeReport {
        pairs: 0,
        violations: 0,
        min_quotient: f64::INFINITY,
        max_quotient: f64::NEG_INFINITY,
    };
    for w in xs.windows(2) {
        let (v, vp) = (w[0], w[1]);
        if v == vp {
            continue;
        }
        let q = (spec.eval(v) - spec.eval(vp)) / (v - vp);
        report.pairs += 1;
        report.min_quotient = report.min_quotient.min(q);
        report.max_quotient = report.max_quotient.max(q);
        if q < c.m - SLOPE_TOL || q > c.l + SLOPE_TOL {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Supremum and infimum of central-difference slopes over the grid
/// `lo, lo + step, ..., hi`.
pub fn numeric_constants(spec: &ActivationSpec, domain: (f64, f64), step: f64) -> Result<(f64, f64)> {
    let (lo, hi) = domain;
    if !(step > 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "bad grid [{lo}, {hi}] with step {step}"
        )));
    }
    let n = ((hi - lo) / step).round() as usize;
    let h = step * 0.5;
    let mut l_hat = f64::NEG_INFINITY;
    let mut m_hat = f64::INFINITY;
    for k in 0..=n {
        let x = lo + k as f64 * step;
        let slope = (spec.eval(x + h) - spec.eval(x - h)) / (2.0 * h);
        l_hat = l_hat.max(slope);
        m_hat = m_hat.min(slope);
    }
    Ok((l_hat, m_hat))
}
