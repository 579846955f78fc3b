//! Scalar reverse-mode differentiation.
//!
//! The materialization code in [`crate::param`] is written once, generic over
//! [`Scalar`]. Running it with `f64` gives plain values; running it with
//! [`Var`] records every operation on a [`Tape`] so that adjoints of the
//! materialized parameters can be pulled back to the raw ones.
//!
//! Subgradient conventions at non-differentiable points:
//! `d|u|/du = 0` at `u = 0`, and `max`/`min` route the whole adjoint to the
//! first argument on ties.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number type accepted by the generic materialization routines.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;

    fn max_c(self, c: f64) -> Self {
        self.max(Self::constant(c))
    }

    fn min_c(self, c: f64) -> Self {
        self.min(Self::constant(c))
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    // Explicit comparisons so NaN behaviour matches the Var implementation.
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
}

/// Sum of an iterator of scalars; `0` when empty.
pub fn sum<T: Scalar, I: IntoIterator<Item = T>>(items: I) -> T {
    items
        .into_iter()
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a + x)))
        .unwrap_or_else(|| T::constant(0.0))
}

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [(usize, f64); 2],
}

/// Append-only record of scalar operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push([(NONE, 0.0), (NONE, 0.0)]);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    fn push(&self, parents: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        nodes.len() - 1
    }

    /// Reverse sweep. `seeds` are `(output, d loss / d output)` pairs; the
    /// returned vector is indexed by node, so `grads[v.index()]` is the
    /// adjoint of `v`.
    pub fn backward(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for (v, g) in seeds {
            if let Some(idx) = v.index() {
                adj[idx] += g;
            }
        }
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &nodes[i].parents {
                if p != NONE {
                    adj[p] += a * d;
                }
            }
        }
        adj
    }
}

/// A scalar tracked on a [`Tape`], or an untracked constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: usize,
    val: f64,
}

impl Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.val)
    }
}

impl<'t> Var<'t> {
    /// Tape index, `None` for constants.
    pub fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.idx)
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, d), (NONE, 0.0)]),
                val,
            },
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        let tape = self.tape.or(other.tape);
        match tape {
            None => Var::constant(val),
            Some(t) => {
                let pa = if self.tape.is_some() { self.idx } else { NONE };
                let pb = if other.tape.is_some() { other.idx } else { NONE };
                Var {
                    tape: Some(t),
                    idx: t.push([(pa, da), (pb, db)]),
                    val,
                }
            }
        }
    }
}

impl Scalar for Var<'_> {
    fn constant(c: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val: c,
        }
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.val.abs(), d)
    }
    fn max(self, other: Self) -> Self {
        if self.val >= other.val {
            self.binary(other, self.val, 1.0, 0.0)
        } else {
            self.binary(other, other.val, 0.0, 1.0)
        }
    }
    fn min(self, other: Self) -> Self {
        if self.val <= other.val {
            self.binary(other, self.val, 1.0, 0.0)
        } else {
            self.binary(other, other.val, 0.0, 1.0)
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}
