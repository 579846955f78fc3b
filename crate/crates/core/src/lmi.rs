//! The block LMI, its Gershgorin discs, and certification reports.
//!
//! Coordinates are ordered `[x, w_1, ..., w_n]`. With `Δ` the difference of
//! two trajectories, the block is `L`-Lipschitz whenever
//!
//! ```text
//! M = [ AᵀA − L²I − 2P₁C₁ᵀΛ₁C₁   S₁C₁ᵀΛ₁                     …   AᵀB      ]
//!     [ S₁Λ₁C₁                   −2Λ₁ − 2P₂C₂ᵀΛ₂C₂   S₂C₂ᵀΛ₂  …            ]
//!     [                          …                            …            ]
//!     [ BᵀA                      …                   SₙΛₙCₙ      BᵀB − 2Λₙ ]
//! ```
//!
//! is negative semidefinite. Entries are written pairwise, so `M` is exactly
//! symmetric without a symmetrization pass.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, JacobiConfig, Matrix};
use crate::param::{compute_g, inner_element_bound, BlockShape, MaterializedBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct LmiMatrix {
    pub m: Matrix,
    /// Start index of the `x` block followed by each `w_l` block.
    pub block_offsets: Vec<usize>,
}

impl LmiMatrix {
    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    fn block_of(&self, idx: usize) -> usize {
        self.block_offsets.iter().rposition(|&o| o <= idx).unwrap()
    }

    /// Whether every nonzero lies on a diagonal block, an adjacent
    /// off-diagonal block, or the `(x, w_n)` corner pair.
    pub fn respects_block_pattern(&self) -> bool {
        let last = self.block_offsets.len() - 1;
        let d = self.dim();
        (0..d).all(|i| {
            (0..d).all(|j| {
                if self.m.get(i, j) == 0.0 {
                    return true;
                }
                let (bi, bj) = (self.block_of(i), self.block_of(j));
                bi.abs_diff(bj) <= 1 || (bi.min(bj) == 0 && bi.max(bj) == last)
            })
        })
    }
}

/// `[0, d_x, d_x + d_1, ...]`: start of `x` and of every `w_l`.
pub fn block_offsets(shape: &BlockShape) -> Vec<usize> {
    let mut off = vec![0, shape.d_x];
    for &d in &shape.dims[..shape.n() - 1] {
        off.push(off.last().unwrap() + d);
    }
    off
}

/// 0/1 matrix picking `[w_{l-1}; w_l]` (with `w_0 = x`) out of the stacked
/// coordinate vector. `l` is 1-based.
pub fn selection_matrix(l: usize, shape: &BlockShape) -> Result<Matrix> {
    if l == 0 || l > shape.n() {
        return Err(Error::InvalidArgument(format!(
            "layer index {l} outside 1..={}",
            shape.n()
        )));
    }
    let off = block_offsets(shape);
    let (din, dout) = (shape.in_dim(l - 1), shape.out_dim(l - 1));
    let mut e = Matrix::zeros(din + dout, shape.lmi_dim());
    for r in 0..din {
        e.set(r, off[l - 1] + r, 1.0);
    }
    for r in 0..dout {
        e.set(din + r, off[l] + r, 1.0);
    }
    Ok(e)
}

fn add_sym(m: &mut Matrix, i: usize, j: usize, v: f64) {
    m.add_at(i, j, v);
    if i != j {
        m.add_at(j, i, v);
    }
}

/// `Σ_j λ_j c_jr c_jq`, i.e. entry `(r, q)` of `Cᵀ diag(λ) C`.
fn weighted_gram(c: &Matrix, lambda: &[f64], r: usize, q: usize) -> f64 {
    (0..c.rows()).map(|j| lambda[j] * c.get(j, r) * c.get(j, q)).sum()
}

pub fn assemble_lmi(block: &MaterializedBlock) -> Result<LmiMatrix> {
    block.validate_shapes()?;
    let shape = &block.shape;
    let n = shape.n();
    let off = block_offsets(shape);
    let d = shape.lmi_dim();
    let l2 = block.lipschitz * block.lipschitz;
    let mut m = Matrix::zeros(d, d);

    let wn = off[n];
    for i in 0..shape.d_x {
        let (a, b) = (block.a[i], block.b[i]);
        m.add_at(i, i, a * a - l2);
        add_sym(&mut m, i, wn + i, a * b);
        m.add_at(wn + i, wn + i, b * b);
    }

    for k in 0..n {
        let act = &block.activations[k];
        let (s, p) = (act.s(), act.p());
        let (c, lam) = (&block.c[k], &block.lambda[k]);
        let (u, w) = (off[k], off[k + 1]);
        let (dout, din) = c.shape();
        if p != 0.0 {
            for r in 0..din {
                for q in r..din {
                    add_sym(&mut m, u + r, u + q, -2.0 * p * weighted_gram(c, lam, r, q));
                }
            }
        }
        for j in 0..dout {
            for r in 0..din {
                add_sym(&mut m, u + r, w + j, s * c.get(j, r) * lam[j]);
            }
            m.add_at(w + j, w + j, -2.0 * lam[j]);
        }
    }

    Ok(LmiMatrix {
        m,
        block_offsets: off,
    })
}

/// Same matrix built as `Σ_l E_lᵀ K_l E_l` plus the `(x, w_n)` term, one
/// dense product per layer. Agrees with [`assemble_lmi`] up to rounding.
pub fn assemble_lmi_summed(block: &MaterializedBlock) -> Result<Matrix> {
    block.validate_shapes()?;
    let shape = &block.shape;
    let n = shape.n();
    let d = shape.lmi_dim();
    let dx = shape.d_x;
    let l2 = block.lipschitz * block.lipschitz;
    let mut total = Matrix::zeros(d, d);
    let mut accumulate = |e: &Matrix, k: &Matrix| -> Result<()> {
        let part = e.transpose().matmul(k)?.matmul(e)?;
        for i in 0..d {
            for j in 0..d {
                total.add_at(i, j, part.get(i, j));
            }
        }
        Ok(())
    };

    for l in 1..=n {
        let act = &block.activations[l - 1];
        let (s, p) = (act.s(), act.p());
        let (c, lam) = (&block.c[l - 1], &block.lambda[l - 1]);
        let (dout, din) = c.shape();
        let k = Matrix::from_fn(din + dout, din + dout, |i, j| match (i < din, j < din) {
            (true, true) => -2.0 * p * weighted_gram(c, lam, i, j),
            (true, false) => s * c.get(j - din, i) * lam[j - din],
            (false, true) => s * lam[i - din] * c.get(i - din, j),
            (false, false) if i == j => -2.0 * lam[i - din],
            _ => 0.0,
        });
        accumulate(&selection_matrix(l, shape)?, &k)?;
    }

    let wn = block_offsets(shape)[n];
    let e = Matrix::from_fn(2 * dx, d, |r, c| {
        let target = if r < dx { r } else { wn + r - dx };
        if c == target {
            1.0
        } else {
            0.0
        }
    });
    let k = Matrix::from_fn(2 * dx, 2 * dx, |i, j| {
        let (a, b) = (&block.a, &block.b);
        match (i < dx, j < dx) {
            (true, true) if i == j => a[i] * a[i] - l2,
            (true, false) if j - dx == i => a[i] * b[i],
            (false, true) if i - dx == j => a[j] * b[j],
            (false, false) if i == j => b[i - dx] * b[i - dx],
            _ => 0.0,
        }
    });
    accumulate(&e, &k)?;
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GershgorinDisc {
    pub row: usize,
    pub center: f64,
    pub radius: f64,
}

impl GershgorinDisc {
    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower() - tol && x <= self.upper() + tol
    }
}

pub fn gershgorin_discs(m: &Matrix) -> Vec<GershgorinDisc> {
    (0..m.rows())
        .map(|i| GershgorinDisc {
            row: i,
            center: m.get(i, i),
            radius: m
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v.abs())
                .sum(),
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn eigenvalues_symmetric(m: &Matrix, rel_tol: f64) -> Result<Vec<f64>> {
    if !m.is_symmetric() {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    symmetric_eigenvalues(
        m,
        JacobiConfig {
            rel_tol,
            ..JacobiConfig::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub disc: f64,
    pub eig: f64,
    pub jacobi_rel_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            disc: 1e-9,
            eig: 1e-8,
            jacobi_rel_tol: JacobiConfig::default().rel_tol,
        }
    }
}

/// One inequality family checked directly on the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs - rhs`; negative when every instance holds.
    pub worst_margin: Option<f64>,
}

impl ConstraintCheck {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            violations: 0,
            worst_margin: None,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, strict: bool) {
        // Bounds recomputed here follow the same arithmetic as the sweep, so
        // only last-bit slack is allowed on non-strict rows.
        let slack = 1e-12 * rhs.abs();
        let ok = if strict { lhs < rhs } else { lhs <= rhs + slack };
        self.checked += 1;
        if !ok || lhs.is_nan() || rhs.is_nan() {
            self.violations += 1;
        }
        let margin = lhs - rhs;
        self.worst_margin = Some(self.worst_margin.map_or(margin, |w| w.max(margin)));
    }

    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Direct checks of every parameter inequality the construction promises.
pub fn constraint_checklist(block: &MaterializedBlock) -> Vec<ConstraintCheck> {
    let shape = &block.shape;
    let n = shape.n();
    let lip = block.lipschitz;
    let l2 = lip * lip;
    let mut out = Vec::new();

    let mut a_pos = ConstraintCheck::new("a_abs > 0");
    let mut a_max = ConstraintCheck::new("a_abs < L");
    let mut b_max = ConstraintCheck::new("b_abs < (L^2 - a^2) / a_abs");
    for (&a, &b) in block.a.iter().zip(&block.b) {
        a_pos.record(0.0, a.abs(), true);
        a_max.record(a.abs(), lip, true);
        b_max.record(b.abs(), (l2 - a * a) / a.abs(), true);
    }
    out.extend([a_pos, a_max, b_max]);

    for k in 0..n {
        let s = block.activations[k].s();
        let p = block.activations[k].p();
        let c = &block.c[k];
        let mut rows = ConstraintCheck::new(format!("layer {}: row l1 < 2 / |S|", k + 1));
        if s != 0.0 {
            for r in c.row_l1() {
                rows.record(r, 2.0 / s.abs(), true);
            }
        }
        out.push(rows);
        let bound = inner_element_bound(s, p);
        if bound.is_finite() {
            let mut elem = ConstraintCheck::new(format!("layer {}: element bound for P > 0", k + 1));
            for v in c.as_slice() {
                elem.record(v.abs(), bound, false);
            }
            out.push(elem);
        }
    }

    let s1 = block.activations[0].s();
    let p1 = block.activations[0].p();
    let c1 = &block.c[0];
    let mut first_rows = ConstraintCheck::new("layer 1: |S_1| row l1 <= 1");
    for r in c1.row_l1() {
        first_rows.record(s1.abs() * r, 1.0, false);
    }
    out.push(first_rows);

    let mut c1_elem = ConstraintCheck::new("layer 1: element bound");
    let d1 = c1.rows() as f64;
    for j in 0..c1.rows() {
        for i in 0..c1.cols() {
            let (a, b) = (block.a[i], block.b[i]);
            let rhs = (l2 - a * a - a.abs() * b.abs()) * s1.abs()
                / (d1 * block.lambda[0][j] * (s1 * s1 + 4.0 * p1.abs()));
            c1_elem.record(c1.get(j, i).abs(), rhs, false);
        }
    }
    out.push(c1_elem);

    let mut positive = ConstraintCheck::new("lambda > 0");
    for &l in block.lambda.iter().flatten() {
        positive.record(0.0, l, true);
    }
    out.push(positive);

    // Multiplier lower bounds, checked as lhs = bound, rhs = λ.
    let cn = &block.c[n - 1];
    let sn = block.activations[n - 1].s();
    let mut lam_n = ConstraintCheck::new(format!("lambda_{n} lower bound"));
    for (i, r) in cn.row_l1().into_iter().enumerate() {
        let (a, b) = (block.a[i], block.b[i]);
        let den = 2.0 - sn.abs() * r;
        let need = (b * b + a.abs() * b.abs()) / den;
        if den <= 0.0 {
            lam_n.record(f64::INFINITY, block.lambda[n - 1][i], false);
        } else {
            lam_n.record(need, block.lambda[n - 1][i], false);
        }
    }
    out.push(lam_n);

    for k in (0..n.saturating_sub(1)).rev() {
        let act = &block.activations[k + 1];
        let mut check = ConstraintCheck::new(format!("lambda_{} lower bound", k + 1));
        match compute_g(&block.lambda[k + 1], &block.c[k + 1], act.s(), act.p()) {
            Ok(g) => {
                let s = block.activations[k].s();
                for (i, r) in block.c[k].row_l1().into_iter().enumerate() {
                    let den = 2.0 - s.abs() * r;
                    let need = if den > 0.0 { g.values[i] / den } else { f64::INFINITY };
                    check.record(need, block.lambda[k][i], false);
                }
            }
            Err(_) => check.record(f64::INFINITY, 0.0, false),
        }
        out.push(check);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiReport {
    pub dim: usize,
    pub max_disc_upper: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub disc_pass: bool,
    pub eig_pass: bool,
    pub checks_pass: bool,
    pub checks: Vec<ConstraintCheck>,
    /// Fraction of disc pairs where one interval contains the other.
    pub nested_fraction: f64,
    pub eig_error: Option<String>,
    #[serde(skip)]
    pub discs: Vec<GershgorinDisc>,
    #[serde(skip)]
    pub eigenvalues: Vec<f64>,
}

impl LmiReport {
    pub fn pass(&self) -> bool {
        self.disc_pass && self.eig_pass && self.checks_pass
    }
}

fn nested_fraction(discs: &[GershgorinDisc]) -> f64 {
    let mut pairs = 0usize;
    let mut nested = 0usize;
    for (i, p) in discs.iter().enumerate() {
        for q in &discs[i + 1..] {
            pairs += 1;
            let p_in_q = p.lower() >= q.lower() && p.upper() <= q.upper();
            let q_in_p = q.lower() >= p.lower() && q.upper() <= p.upper();
            if p_in_q || q_in_p {
                nested += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        nested as f64 / pairs as f64
    }
}

/// Assemble, compute discs and eigenvalues, and run the parameter checklist.
/// Every finding is reported; nothing here fails early.
pub fn verify_block(block: &MaterializedBlock, tol: &Tolerances) -> LmiReport {
    let lmi = match assemble_lmi(block) {
        Ok(l) => l,
        Err(e) => {
            return LmiReport {
                dim: 0,
                max_disc_upper: f64::NAN,
                min_eig: f64::NAN,
                max_eig: f64::NAN,
                disc_pass: false,
                eig_pass: false,
                checks_pass: false,
                checks: Vec::new(),
                nested_fraction: 0.0,
                eig_error: Some(e.to_string()),
                discs: Vec::new(),
                eigenvalues: Vec::new(),
            }
        }
    };
    let discs = gershgorin_discs(&lmi.m);
    let max_disc_upper = discs.iter().map(GershgorinDisc::upper).fold(f64::NEG_INFINITY, f64::max);
    let (eigenvalues, eig_error) = match eigenvalues_symmetric(&lmi.m, tol.jacobi_rel_tol) {
        Ok(e) => (e, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let min_eig = eigenvalues.first().copied().unwrap_or(f64::NAN);
    let max_eig = eigenvalues.last().copied().unwrap_or(f64::NAN);
    let checks = constraint_checklist(block);
    LmiReport {
        dim: lmi.dim(),
        max_disc_upper,
        min_eig,
        max_eig,
        disc_pass: max_disc_upper <= tol.disc,
        eig_pass: eig_error.is_none() && max_eig <= tol.eig,
        checks_pass: checks.iter().all(ConstraintCheck::pass),
        checks,
        nested_fraction: nested_fraction(&discs),
        eig_error,
        discs,
        eigenvalues,
    }
}

/// CSV with header `row,center,radius`.
pub fn write_discs_csv<W: Write>(mut w: W, discs: &[GershgorinDisc]) -> Result<()> {
    writeln!(w, "row,center,radius")?;
    for d in discs {
        writeln!(w, "{},{},{}", d.row, d.center, d.radius)?;
    }
    Ok(())
}

/// CSV with header `index,eigenvalue`.
pub fn write_eigenvalues_csv<W: Write>(mut w: W, eigenvalues: &[f64]) -> Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, e) in eigenvalues.iter().enumerate() {
        writeln!(w, "{i},{e}")?;
    }
    Ok(())
}

/// Keeps values within `[Q1 - k IQR, Q3 + k IQR]`, for display only.
pub fn clip_to_quartile_range(sorted: &[f64], k: f64) -> Vec<f64> {
    if sorted.len() < 2 {
        return sorted.to_vec();
    }
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let (q1, q3) = (q(0.25), q(0.75));
    let iqr = q3 - q1;
    sorted
        .iter()
        .copied()
        .filter(|&x| x >= q1 - k * iqr && x <= q3 + k * iqr)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationSpec;
    use crate::param::{backward_pass, init_raw, MaterializeConfig};

    fn act(name: &str) -> ActivationSpec {
        ActivationSpec::new(name).unwrap()
    }

    fn zero_block(shape: BlockShape, acts: &[&str], lipschitz: f64, lambda: f64) -> MaterializedBlock {
        let n = shape.n();
        MaterializedBlock {
            a: vec![0.0; shape.d_x],
            b: vec![0.0; shape.d_x],
            c: (0..n).map(|k| Matrix::zeros(shape.out_dim(k), shape.in_dim(k))).collect(),
            lambda: (0..n).map(|k| vec![lambda; shape.out_dim(k)]).collect(),
            biases: (0..n).map(|k| vec![0.0; shape.out_dim(k)]).collect(),
            activations: acts.iter().map(|a| act(a)).collect(),
            lipschitz,
            shape,
        }
    }

    fn random_block(seed: u64) -> MaterializedBlock {
        let shape = BlockShape::new(3, vec![5, 4, 3]).unwrap();
        let raw = init_raw(&shape, 1.5, vec![act("tanh"), act("leaky_relu"), act("gelu")], seed).unwrap();
        backward_pass(&raw, &MaterializeConfig::default()).unwrap()
    }

    #[test]
    fn selection_examples() {
        let shape = BlockShape::new(2, vec![1, 2]).unwrap();
        let e = selection_matrix(1, &shape).unwrap();
        assert_eq!(e.shape(), (3, 5));
        for r in 0..3 {
            assert_eq!(e.get(r, r), 1.0);
            assert_eq!(e.row(r).iter().sum::<f64>(), 1.0);
        }
        let e2 = selection_matrix(2, &shape).unwrap();
        let g = e2.transpose().matmul(&e2).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let v = g.get(i, j);
                assert!(v == 0.0 || (i == j && v == 1.0));
            }
        }
        assert!(selection_matrix(0, &shape).is_err());
        assert!(selection_matrix(3, &shape).is_err());
    }

    #[test]
    fn zero_block_is_block_diagonal() {
        let shape = BlockShape::new(2, vec![3, 2]).unwrap();
        let blk = zero_block(shape, &["relu", "tanh"], 1.5, 0.2);
        let lmi = assemble_lmi(&blk).unwrap();
        let diag: Vec<f64> = (0..lmi.dim()).map(|i| lmi.m.get(i, i)).collect();
        assert_eq!(diag, vec![-2.25, -2.25, -0.4, -0.4, -0.4, -0.4, -0.4]);
        assert_eq!(lmi.m.frobenius_norm(), Matrix::from_fn(7, 7, |i, j| if i == j { diag[i] } else { 0.0 }).frobenius_norm());
        let r = verify_block(&blk, &Tolerances::default());
        assert!(r.disc_pass && r.eig_pass);
        assert_eq!(r.max_disc_upper, -(2.25f64.min(0.4)));
    }

    #[test]
    fn single_layer_structure() {
        let shape = BlockShape::new(1, vec![1]).unwrap();
        let mut blk = zero_block(shape, &["relu"], 1.0, 0.3);
        blk.a = vec![0.5];
        blk.b = vec![0.2];
        blk.c = vec![Matrix::from_rows(&[vec![0.4]]).unwrap()];
        let lmi = assemble_lmi(&blk).unwrap();
        // [[a² − L², ab + S c λ], [., b² − 2λ]] with S = 1, P = 0.
        assert_eq!(lmi.m.get(0, 0), 0.25 - 1.0);
        assert!((lmi.m.get(0, 1) - (0.1 + 0.4 * 0.3)).abs() < 1e-15);
        assert!((lmi.m.get(1, 1) - (0.04 - 0.6)).abs() < 1e-15);
    }

    #[test]
    fn discs_by_definition() {
        let m = Matrix::from_rows(&[vec![-2.0, 1.0], vec![1.0, -3.0]]).unwrap();
        let d = gershgorin_discs(&m);
        assert_eq!((d[0].center, d[0].radius), (-2.0, 1.0));
        assert_eq!((d[1].center, d[1].radius), (-3.0, 1.0));
        let diag = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!(gershgorin_discs(&diag).iter().all(|d| d.radius == 0.0));
    }

    #[test]
    fn row_and_column_discs_coincide() {
        let lmi = assemble_lmi(&random_block(5)).unwrap();
        let rows = gershgorin_discs(&lmi.m);
        let cols = gershgorin_discs(&lmi.m.transpose());
        assert_eq!(rows, cols);
    }

    #[test]
    fn materialized_blocks_are_symmetric_and_structured() {
        for seed in 0..10 {
            let lmi = assemble_lmi(&random_block(seed)).unwrap();
            assert!(lmi.m.is_symmetric());
            assert!(lmi.respects_block_pattern());
        }
    }

    #[test]
    fn selection_route_matches_direct_assembly() {
        for seed in 0..5 {
            let blk = random_block(seed);
            let direct = assemble_lmi(&blk).unwrap().m;
            let summed = assemble_lmi_summed(&blk).unwrap();
            assert!(direct.max_abs_diff(&summed) < 1e-12);
        }
        let shape = BlockShape::new(2, vec![2]).unwrap();
        let raw = init_raw(&shape, 1.0, vec![act("elu")], 1).unwrap();
        let blk = backward_pass(&raw, &MaterializeConfig::default()).unwrap();
        let direct = assemble_lmi(&blk).unwrap().m;
        assert!(direct.max_abs_diff(&assemble_lmi_summed(&blk).unwrap()) < 1e-12);
    }

    #[test]
    fn materialized_blocks_pass() {
        for seed in 0..10 {
            let r = verify_block(&random_block(seed), &Tolerances::default());
            assert!(r.pass(), "{r:?}");
            for e in &r.eigenvalues {
                assert!(r.discs.iter().any(|d| d.contains(*e, 1e-9)));
            }
        }
    }

    #[test]
    fn corrupted_row_is_caught() {
        let mut blk = random_block(3);
        let c = &blk.c[1];
        blk.c[1] = Matrix::from_fn(c.rows(), c.cols(), |i, j| if i == 0 { 10.0 * c.get(i, j) } else { c.get(i, j) });
        let r = verify_block(&blk, &Tolerances::default());
        assert!(!r.checks_pass);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(eigenvalues_symmetric(&m, 1e-14).is_err());
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_discs_csv(&mut buf, &[GershgorinDisc { row: 0, center: -1.5, radius: 0.25 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,center,radius\n0,-1.5,0.25\n");
        let mut buf = Vec::new();
        write_eigenvalues_csv(&mut buf, &[-2.0, -1.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,eigenvalue\n0,-2\n1,-1\n");
    }

    #[test]
    fn quartile_clip_drops_outliers() {
        let mut v: Vec<f64> = (0..20).map(f64::from).collect();
        v.insert(0, -1e11);
        let kept = clip_to_quartile_range(&v, 10.0);
        assert_eq!(kept.len(), 20);
        assert!(kept.iter().all(|&x| x >= 0.0));
    }
}
