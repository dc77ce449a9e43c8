//! Compact fourth-order operators for `u_xx` and `w_xx`, and the semi-discrete right-hand
//! sides of the coupled value/delta system.
//!
//! Each operator represents `A f'' = B f + b`, where `b` is zero except in the first row.
//! The value operator acts on nodes `x_0 .. x_{M-1}`, the delta operator on
//! `x_1 .. x_{M-1}`; the far node carries the Dirichlet zero and drops out of both.

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridMode};
use crate::model::{CoefficientField, ScaledModel};

/// Coefficients of `d1 f''_{i-1} + f''_i + d3 f''_{i+1} = e1 f_{i-1} + e2 f_i + e3 f_{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitianCoeffs {
    pub d1: f64,
    pub d3: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

/// Three-point compact row for left spacing `a` and right spacing `b`.
pub fn hermitian_coeffs(a: f64, b: f64) -> HermitianCoeffs {
    let s = a + b;
    let d = a * a + 3.0 * a * b + b * b;
    HermitianCoeffs {
        d1: b * (a * a + a * b - b * b) / (s * d),
        d3: a * (b * b + a * b - a * a) / (s * d),
        e1: 12.0 * b / (s * d),
        e2: -12.0 / d,
        e3: 12.0 * a / (s * d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// Acts on `u` at `x_0 .. x_{M-1}`; Robin closure in row 0.
    Value,
    /// Acts on `w` at `x_1 .. x_{M-1}`; combined compact closure in row 0.
    Delta,
}

/// One term `weight * f^(derivative)(at)` of a linear stencil identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub derivative: usize,
    pub at: f64,
    pub weight: f64,
}

/// A row written as `sum(lhs) = sum(rhs)` for a smooth `f`, with every boundary datum
/// expressed through derivatives of `f` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub lhs: Vec<Term>,
    pub rhs: Vec<Term>,
}

fn term(derivative: usize, at: f64, weight: f64) -> Term {
    Term { derivative, at, weight }
}

/// `A f'' = B f + b` with `A` factorized once.
#[derive(Debug, Clone)]
pub struct CompactOperator {
    kind: OperatorKind,
    mode: GridMode,
    a: BandedMatrix,
    b: BandedMatrix,
    lu: BandedLu,
    /// Coordinates of the unknowns.
    nodes: Vec<f64>,
    /// First grid spacing.
    h0: f64,
    strike: f64,
}

impl CompactOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn left(&self) -> &BandedMatrix {
        &self.a
    }

    pub fn right(&self) -> &BandedMatrix {
        &self.b
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn boundary_spacing(&self) -> f64 {
        self.h0
    }

    /// First-row boundary datum for the value operator: `6E/h`.
    pub fn value_boundary(&self) -> f64 {
        6.0 * self.strike / self.h0
    }

    /// First-row boundary datum for the delta operator.
    pub fn delta_boundary(&self, u0: f64, u2: f64, w0: f64) -> f64 {
        let h = self.h0;
        75.0 / (h * h * h) * (u2 - u0) - 15.0 / (h * h) * w0
    }

    /// `A^{-1} (B f + b)` with `b = (b0, 0, ..., 0)`.
    pub fn apply(&self, f: &[f64], b0: f64) -> Result<Vec<f64>> {
        let mut out = self.b.matvec(f)?;
        out[0] += b0;
        self.lu.solve_in_place(&mut out)?;
        Ok(out)
    }

    /// Solve `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.lu.solve(rhs)
    }

    /// Row `i` as a stencil identity on smooth functions. The value operator's Robin
    /// row uses `E = f(0) - f'(0)`; the delta operator's first row is written for
    /// `u = f` and `w = f'`, every other delta row for `w = f`.
    pub fn row_stencil(&self, i: usize, grid: &Grid) -> Stencil {
        let x = grid.nodes();
        let offset = match self.kind {
            OperatorKind::Value => 0,
            OperatorKind::Delta => 1,
        };
        if i == 0 {
            let h = self.h0;
            return match self.kind {
                OperatorKind::Value => Stencil {
                    lhs: (0..3).map(|j| term(2, x[j], self.a.get(0, j))).collect(),
                    rhs: vec![
                        term(0, x[0], self.b.get(0, 0) + 6.0 / h),
                        term(0, x[1], self.b.get(0, 1)),
                        term(0, x[2], self.b.get(0, 2)),
                        term(1, x[0], -6.0 / h),
                    ],
                },
                OperatorKind::Delta => Stencil {
                    lhs: vec![term(3, x[1], self.a.get(0, 0))],
                    rhs: vec![
                        term(1, x[1], self.b.get(0, 0)),
                        term(1, x[2], self.b.get(0, 1)),
                        term(0, x[2], 75.0 / (h * h * h)),
                        term(0, x[0], -75.0 / (h * h * h)),
                        term(1, x[0], -15.0 / (h * h)),
                    ],
                },
            };
        }
        let n = self.dim();
        let cols = i.saturating_sub(1)..(i + 4).min(n + 1);
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for j in cols {
            // Column n is the far node, whose value is the folded Dirichlet zero; include
            // it so the identity is checked against the full three-point relation.
            let (a, b) = if j < n {
                (self.a.get(i, j), self.b.get(i, j))
            } else {
                self.far_coefficients(i, grid)
            };
            if a != 0.0 {
                lhs.push(term(2, x[j + offset], a));
            }
            if b != 0.0 {
                rhs.push(term(0, x[j + offset], b));
            }
        }
        Stencil { lhs, rhs }
    }

    fn far_coefficients(&self, i: usize, grid: &Grid) -> (f64, f64) {
        if i + 1 != self.dim() {
            return (0.0, 0.0);
        }
        let offset = match self.kind {
            OperatorKind::Value => 0,
            OperatorKind::Delta => 1,
        };
        let node = i + offset;
        let hs = grid.spacings();
        let c = hermitian_coeffs(hs[node - 1], hs[node]);
        if self.mode == GridMode::Uniform {
            let h = hs[node];
            (1.0, 12.0 / (h * h))
        } else {
            (c.d3, c.e3)
        }
    }
}

fn check_mode(grid: &Grid, mode: GridMode) -> Result<()> {
    if grid.mode() != mode {
        return Err(Error::ModeMismatch {
            expected: mode.name(),
            found: grid.mode().name(),
        });
    }
    Ok(())
}

/// Fill row `row` of `(A, B)` with the three-point interior relation at grid node `node`;
/// `col` is the matrix column of that node.
fn interior_row(
    a: &mut BandedMatrix,
    b: &mut BandedMatrix,
    row: usize,
    col: usize,
    node: usize,
    grid: &Grid,
    mode: GridMode,
) {
    let hs = grid.spacings();
    let n = a.dim();
    let (left, right) = (hs[node - 1], hs[node]);
    let (d1, d2, d3, e1, e2, e3) = if mode == GridMode::Uniform {
        let h2 = left * left;
        (1.0, 10.0, 1.0, 12.0 / h2, -24.0 / h2, 12.0 / h2)
    } else {
        let c = hermitian_coeffs(left, right);
        (c.d1, 1.0, c.d3, c.e1, c.e2, c.e3)
    };
    a.set(row, col - 1, d1);
    a.set(row, col, d2);
    b.set(row, col - 1, e1);
    b.set(row, col, e2);
    if col + 1 < n {
        a.set(row, col + 1, d3);
        b.set(row, col + 1, e3);
    }
}

fn check_dominance(a: &BandedMatrix) -> Result<()> {
    for i in 0..a.dim() {
        let off: f64 = (0..a.dim())
            .filter(|&j| j != i)
            .map(|j| a.get(i, j).abs())
            .sum();
        if !(a.get(i, i).abs() > off) {
            return Err(Error::Singular { row: i });
        }
    }
    Ok(())
}

fn finish(
    kind: OperatorKind,
    mode: GridMode,
    a: BandedMatrix,
    b: BandedMatrix,
    nodes: Vec<f64>,
    h0: f64,
    strike: f64,
) -> Result<CompactOperator> {
    check_dominance(&a)?;
    let lu = a.factor()?;
    Ok(CompactOperator { kind, mode, a, b, lu, nodes, h0, strike })
}

/// Operator for `u_xx` on `x_0 .. x_{M-1}`.
pub fn assemble_u(grid: &Grid, model: &ScaledModel, mode: GridMode) -> Result<CompactOperator> {
    check_mode(grid, mode)?;
    let m = grid.last_index();
    let h = grid.boundary_spacing();
    let h2 = h * h;
    let mut a = BandedMatrix::zeros(m, 1, 3);
    let mut b = BandedMatrix::zeros(m, 1, 3);

    a.set(0, 0, 5.0 / 3.0);
    a.set(0, 1, 2.0 / 3.0);
    a.set(0, 2, -1.0 / 3.0);
    b.set(0, 0, -(7.0 + 6.0 * h) / h2);
    b.set(0, 1, 8.0 / h2);
    b.set(0, 2, -1.0 / h2);

    let mut start = 1;
    if mode == GridMode::Refined {
        a.set(1, 1, 14.0);
        a.set(1, 2, -5.0);
        a.set(1, 3, 4.0);
        a.set(1, 4, -1.0);
        b.set(1, 0, 12.0 / h2);
        b.set(1, 1, -24.0 / h2);
        b.set(1, 2, 12.0 / h2);
        start = 2;
    }
    for i in start..m {
        interior_row(&mut a, &mut b, i, i, i, grid, mode);
    }
    let nodes = grid.nodes()[..m].to_vec();
    finish(OperatorKind::Value, mode, a, b, nodes, h, model.strike)
}

/// Operator for `w_xx` on `x_1 .. x_{M-1}`.
pub fn assemble_w(grid: &Grid, model: &ScaledModel, mode: GridMode) -> Result<CompactOperator> {
    check_mode(grid, mode)?;
    let m = grid.last_index();
    let n = m - 1;
    let h = grid.boundary_spacing();
    let h2 = h * h;
    let mut a = BandedMatrix::zeros(n, 1, 3);
    let mut b = BandedMatrix::zeros(n, 1, 3);

    a.set(0, 0, 10.0);
    b.set(0, 0, -120.0 / h2);
    b.set(0, 1, -15.0 / h2);
    for j in 1..n {
        interior_row(&mut a, &mut b, j, j, j + 1, grid, mode);
    }
    let nodes = grid.nodes()[1..m].to_vec();
    finish(OperatorKind::Delta, mode, a, b, nodes, h, model.strike)
}

/// Scaled value `u`, delta `w` and boundary `s_f` at time-to-maturity `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub tau: f64,
    /// `u` at `x_0 .. x_{M-1}`; `u[0] = E - s_f`.
    pub u: Vec<f64>,
    /// `w` at `x_1 .. x_{M-1}`.
    pub w: Vec<f64>,
    pub s_f: f64,
}

impl SolverState {
    /// Smooth-pasting value `w_0 = -s_f`.
    pub fn w0(&self) -> f64 {
        -self.s_f
    }

    /// `w` at `x_0 .. x_{M-1}`.
    pub fn w_extended(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() + 1);
        out.push(self.w0());
        out.extend_from_slice(&self.w);
        out
    }
}

/// Both operators for one grid.
#[derive(Debug, Clone)]
pub struct Operators {
    pub grid: Grid,
    pub u: CompactOperator,
    pub w: CompactOperator,
}

impl Operators {
    pub fn assemble(grid: Grid, model: &ScaledModel) -> Result<Self> {
        let mode = grid.mode();
        let u = assemble_u(&grid, model, mode)?;
        let w = assemble_w(&grid, model, mode)?;
        Ok(Operators { grid, u, w })
    }

    /// Number of value unknowns `M`.
    pub fn size(&self) -> usize {
        self.u.dim()
    }
}

pub fn second_derivative_u(ops: &Operators, u: &[f64]) -> Result<Vec<f64>> {
    ops.u.apply(u, ops.u.value_boundary())
}

pub fn second_derivative_w(ops: &Operators, w: &[f64], u: &[f64], w0: f64) -> Result<Vec<f64>> {
    if u.len() < 3 {
        return Err(Error::Dimension { expected: 3, found: u.len() });
    }
    ops.w.apply(w, ops.w.delta_boundary(u[0], u[2], w0))
}

fn check_lengths(state: &SolverState, ops: &Operators, coeffs: &CoefficientField) -> Result<()> {
    let m = ops.size();
    for found in [state.u.len(), coeffs.len()] {
        if found != m {
            return Err(Error::Dimension { expected: m, found });
        }
    }
    if state.w.len() != m - 1 {
        return Err(Error::Dimension { expected: m - 1, found: state.w.len() });
    }
    Ok(())
}

/// `u_tau = xi1 u_xx + xi2 w_ext - r u`, given a precomputed `u_xx`.
pub fn rhs_u(
    state: &SolverState,
    ops: &Operators,
    coeffs: &CoefficientField,
    rate: f64,
    uxx: &[f64],
) -> Result<Vec<f64>> {
    check_lengths(state, ops, coeffs)?;
    let w0 = state.w0();
    Ok((0..ops.size())
        .map(|i| {
            let w = if i == 0 { w0 } else { state.w[i - 1] };
            coeffs.xi1[i] * uxx[i] + coeffs.xi2[i] * w - rate * state.u[i]
        })
        .collect())
}

/// `w_tau = xi1 w_xx + xi3 u_xx - xi4 w` on `x_1 .. x_{M-1}`, reusing `u_xx`.
pub fn rhs_w(
    state: &SolverState,
    ops: &Operators,
    coeffs: &CoefficientField,
    uxx: &[f64],
) -> Result<Vec<f64>> {
    check_lengths(state, ops, coeffs)?;
    let wxx = second_derivative_w(ops, &state.w, &state.u, state.w0())?;
    Ok((0..state.w.len())
        .map(|j| {
            let i = j + 1;
            coeffs.xi1[i] * wxx[j] + coeffs.xi3[i] * uxx[i] - coeffs.xi4[i] * state.w[j]
        })
        .collect())
}

/// Both time derivatives with a single value-operator solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub u_tau: Vec<f64>,
    pub w_tau: Vec<f64>,
    pub uxx: Vec<f64>,
}

pub fn rhs(
    state: &SolverState,
    ops: &Operators,
    coeffs: &CoefficientField,
    rate: f64,
) -> Result<Derivatives> {
    check_lengths(state, ops, coeffs)?;
    let uxx = second_derivative_u(ops, &state.u)?;
    let u_tau = rhs_u(state, ops, coeffs, rate, &uxx)?;
    let w_tau = rhs_w(state, ops, coeffs, &uxx)?;
    Ok(Derivatives { u_tau, w_tau, uxx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build, GridSpec};
    use crate::model::{coefficients, scale, ModelParams};

    fn model(strike: f64) -> ScaledModel {
        scale(ModelParams {
            strike,
            maturity: 0.5,
            sigma: 0.2,
            rate: 0.05,
            alpha: -1.0 / 3.0,
            spot: 10.0,
            x_max: 3.0,
        })
        .unwrap()
    }

    fn check_hermitian(a: f64, b: f64, p: impl Fn(f64) -> f64, p2: impl Fn(f64) -> f64) -> f64 {
        let c = hermitian_coeffs(a, b);
        let x = 0.7;
        let lhs = c.d1 * p2(x - a) + p2(x) + c.d3 * p2(x + b);
        let rhs = c.e1 * p(x - a) + c.e2 * p(x) + c.e3 * p(x + b);
        (lhs - rhs).abs() / lhs.abs().max(1.0)
    }

    #[test]
    fn hermitian_uniform_limit() {
        let h = 0.1;
        let c = hermitian_coeffs(h, h);
        assert!((c.d1 - 0.1).abs() < 1e-15);
        assert!((c.d3 - 0.1).abs() < 1e-15);
        assert!((c.e2 + 12.0 / (5.0 * h * h)).abs() < 1e-10);
        assert!((c.e1 - 6.0 / (5.0 * h * h)).abs() < 1e-10);
    }

    #[test]
    fn hermitian_exactness() {
        for (a, b) in [(0.1, 0.1), (0.1, 0.2), (0.025, 0.1), (0.3, 0.05)] {
            assert!(check_hermitian(a, b, |x| x * x, |_| 2.0) < 1e-12);
            assert!(check_hermitian(a, b, |x| x.powi(3), |x| 6.0 * x) < 1e-12);
            assert!(check_hermitian(a, b, |x| x.powi(4), |x| 12.0 * x * x) < 1e-12);
        }
    }

    #[test]
    fn mode_mismatch() {
        let m = model(9.0);
        let grid = build(&GridSpec::uniform(0.1, 3.0)).unwrap();
        assert!(matches!(
            assemble_u(&grid, &m, GridMode::Refined),
            Err(Error::ModeMismatch { .. })
        ));
        assert!(assemble_w(&grid, &m, GridMode::Refined).is_err());
    }

    #[test]
    fn uniform_rows() {
        let m = model(9.0);
        let grid = build(&GridSpec::uniform(0.1, 3.0)).unwrap();
        let op = assemble_u(&grid, &m, GridMode::Uniform).unwrap();
        assert_eq!(op.dim(), 30);
        assert_eq!(op.left().get(0, 0), 5.0 / 3.0);
        assert!((op.right().get(0, 0) + 7.6 / 0.01).abs() < 1e-9);
        assert!((op.value_boundary() - 6.0 * 0.9 / 0.1).abs() < 1e-12);
        assert_eq!(op.left().get(5, 5), 10.0);
        let w = assemble_w(&grid, &m, GridMode::Uniform).unwrap();
        assert_eq!(w.dim(), 29);
        assert_eq!(w.left().get(0, 1), 0.0);
        assert!((w.right().get(0, 1) + 1500.0).abs() < 1e-9);
    }

    #[test]
    fn robin_row_on_quadratic() {
        // u = x^2: u'(0) = 0, so E = u(0) - u'(0) = 0 and both sides equal 4.
        let h = 0.1;
        let lhs: f64 = 5.0 / 3.0 * 2.0 + 2.0 / 3.0 * 2.0 - 1.0 / 3.0 * 2.0;
        let rhs = (-(7.0 + 6.0 * h) * 0.0 + 8.0 * h * h - 4.0 * h * h) / (h * h);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn combined_compact_row_examples() {
        let h: f64 = 0.05;
        // u = x^3, w = 3x^2
        let w2 = 15.0 / (2.0 * h.powi(3)) * (8.0 * h.powi(3)) - 3.0 / (2.0 * h * h) * (36.0 * h * h);
        assert!((w2 - 6.0).abs() < 1e-10);
        // u = x^4, w = 4x^3
        let w2 = 15.0 / (2.0 * h.powi(3)) * (16.0 * h.powi(4))
            - 3.0 / (2.0 * h * h) * (0.0 + 8.0 * 4.0 * h.powi(3) + 4.0 * 8.0 * h.powi(3));
        assert!((w2 - 24.0 * h).abs() < 1e-10);
    }

    #[test]
    fn refined_rows_are_dominant() {
        let m = model(9.0);
        let grid = build(&GridSpec::refined(0.06, 3.0)).unwrap();
        let op = assemble_u(&grid, &m, GridMode::Refined).unwrap();
        assert_eq!(op.left().get(1, 1), 14.0);
        assert_eq!(op.left().get(1, 2), -5.0);
        assert_eq!(op.left().get(1, 4), -1.0);
        assert!(assemble_w(&grid, &m, GridMode::Refined).is_ok());
    }

    #[test]
    fn solve_residual() {
        let m = model(9.0);
        for spec in [GridSpec::uniform(0.05, 3.0), GridSpec::refined(0.05, 3.0)] {
            let grid = build(&spec).unwrap();
            let op = assemble_u(&grid, &m, grid.mode()).unwrap();
            let rhs: Vec<f64> = (0..op.dim()).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let sol = op.solve(&rhs).unwrap();
            let back = op.left().matvec(&sol).unwrap();
            let norm = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let res = back.iter().zip(&rhs).fold(0.0f64, |a, (b, r)| a.max((b - r).abs()));
            assert!(res <= 1e-12 * norm);
        }
    }

    #[test]
    fn rhs_reduces_to_decay() {
        let m = model(9.0);
        let grid = build(&GridSpec::uniform(0.1, 3.0)).unwrap();
        let ops = Operators::assemble(grid.clone(), &m).unwrap();
        let n = ops.size();
        let state = SolverState {
            tau: 0.0,
            u: (0..n).map(|i| 0.01 * i as f64).collect(),
            w: vec![0.0; n - 1],
            s_f: 0.9,
        };
        let mut coeffs = coefficients(&m, &grid.nodes()[..n], 0.9, 0.0).unwrap();
        coeffs.xi1.iter_mut().for_each(|v| *v = 0.0);
        coeffs.xi2.iter_mut().for_each(|v| *v = 0.0);
        coeffs.xi3.iter_mut().for_each(|v| *v = 0.0);
        let d = rhs(&state, &ops, &coeffs, 0.05).unwrap();
        for (ut, u) in d.u_tau.iter().zip(&state.u) {
            assert!((ut + 0.05 * u).abs() < 1e-15);
        }
        for (wt, (w, xi4)) in d.w_tau.iter().zip(state.w.iter().zip(&coeffs.xi4[1..])) {
            assert!((wt + xi4 * w).abs() < 1e-15);
        }
        let uxx = second_derivative_u(&ops, &state.u).unwrap();
        assert_eq!(uxx, d.uxx);
    }

    #[test]
    fn rhs_checks_dimensions() {
        let m = model(9.0);
        let grid = build(&GridSpec::uniform(0.1, 3.0)).unwrap();
        let ops = Operators::assemble(grid.clone(), &m).unwrap();
        let state = SolverState { tau: 0.0, u: vec![0.0; 3], w: vec![0.0; 2], s_f: 0.9 };
        let coeffs = coefficients(&m, &grid.nodes()[..3], 0.9, 0.0).unwrap();
        assert!(matches!(rhs(&state, &ops, &coeffs, 0.05), Err(Error::Dimension { .. })));
    }
}
