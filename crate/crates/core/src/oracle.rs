//! Independent reference computations: a Crank-Nicolson / projected SOR pricer for the
//! untransformed American CEV put, plus dense moment and polynomial-exactness checks for
//! the stencils used by the main solver.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::spatial::Stencil;

/// Asset-space discretization for [`cn_psor_price`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcpGrid {
    pub s_max: f64,
    /// Number of asset intervals.
    pub intervals: usize,
    pub time_steps: usize,
    pub omega: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Leading fully implicit steps (half size each) that damp the payoff kink.
    pub smoothing_steps: usize,
}

impl LcpGrid {
    /// `S_max = 4 max(K, S0)` with the given resolution and default SOR settings.
    pub fn new(params: &ModelParams, intervals: usize, time_steps: usize) -> Self {
        LcpGrid {
            s_max: 4.0 * params.strike.max(params.spot),
            intervals,
            time_steps,
            omega: 1.2,
            tolerance: 1e-9,
            max_iterations: 10_000,
            smoothing_steps: 2,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.s_max / self.intervals as f64
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.s_max < 4.0 * params.strike.max(params.spot) * (1.0 - 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "S_max = {} is below 4 max(K, S0)",
                self.s_max
            )));
        }
        if self.intervals < 4 || self.time_steps == 0 {
            return Err(Error::InvalidParameter(
                "LCP grid needs at least 4 intervals and one time step".into(),
            ));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation must lie in (0, 2), got {}",
                self.omega
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub value: f64,
    pub delta: f64,
    /// `(tau, S_f)` per time level.
    pub boundary: Vec<(f64, f64)>,
    /// Nodal values at maturity.
    pub values: Vec<f64>,
    pub total_iterations: usize,
}

/// Projected SOR for `A v >= b, v >= psi` with `A` tridiagonal `(lower, diag, upper)`.
/// `v` holds the initial guess; the first and last entries are kept fixed.
fn psor(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    b: &[f64],
    psi: &[f64],
    v: &mut [f64],
    grid: &LcpGrid,
) -> Result<usize> {
    let n = v.len();
    for it in 1..=grid.max_iterations {
        let mut change = 0.0f64;
        let mut scale = 0.0f64;
        for i in 1..n - 1 {
            let gs = (b[i] - lower[i] * v[i - 1] - upper[i] * v[i + 1]) / diag[i];
            let new = (v[i] + grid.omega * (gs - v[i])).max(psi[i]);
            change = change.max((new - v[i]).abs());
            scale = scale.max(new.abs());
            v[i] = new;
        }
        if change <= grid.tolerance * scale.max(1.0) {
            return Ok(it);
        }
    }
    Err(Error::SorNonConvergence { iterations: grid.max_iterations })
}

/// American CEV put by Crank-Nicolson in time and central differences in `S`.
pub fn cn_psor_price(params: &ModelParams, grid: &LcpGrid) -> Result<LcpSolution> {
    params.validate()?;
    grid.validate(params)?;
    let n = grid.intervals;
    let ds = grid.spacing();
    let k = params.strike;
    let r = params.rate;
    let s: Vec<f64> = (0..=n).map(|i| i as f64 * ds).collect();
    let payoff: Vec<f64> = s.iter().map(|si| (k - si).max(0.0)).collect();

    // L v_i = a_i v_{i-1} + c_i v_i + e_i v_{i+1}
    let mut la = vec![0.0; n + 1];
    let mut lc = vec![0.0; n + 1];
    let mut le = vec![0.0; n + 1];
    for i in 1..n {
        let var = params.sigma.powi(2) * s[i].powi(2) * (s[i] / params.spot).powf(2.0 * params.alpha);
        let diff = 0.5 * var / (ds * ds);
        let conv = 0.5 * r * s[i] / ds;
        la[i] = diff - conv;
        lc[i] = -2.0 * diff - r;
        le[i] = diff + conv;
    }

    let mut v = payoff.clone();
    let mut boundary = vec![(0.0, k)];
    let mut total_iterations = 0;
    let dt = params.maturity / grid.time_steps as f64;

    // Smoothing: the first CN step is replaced by `smoothing_steps` implicit sub-steps.
    let mut schedule: Vec<(f64, f64)> = Vec::new();
    let smoothing = grid.smoothing_steps.min(grid.time_steps);
    if smoothing > 0 {
        for _ in 0..smoothing {
            schedule.push((dt / smoothing as f64, 1.0));
        }
        // Keep the total horizon: smoothing covers exactly one regular step.
        for _ in 1..grid.time_steps {
            schedule.push((dt, 0.5));
        }
    } else {
        schedule = vec![(dt, 0.5); grid.time_steps];
    }

    let mut lower = vec![0.0; n + 1];
    let mut diag = vec![1.0; n + 1];
    let mut upper = vec![0.0; n + 1];
    let mut rhs = vec![0.0; n + 1];
    let mut tau = 0.0;
    for (step, theta) in schedule {
        for i in 1..n {
            lower[i] = -theta * step * la[i];
            diag[i] = 1.0 - theta * step * lc[i];
            upper[i] = -theta * step * le[i];
            let explicit = (1.0 - theta) * step;
            rhs[i] = v[i] + explicit * (la[i] * v[i - 1] + lc[i] * v[i] + le[i] * v[i + 1]);
        }
        v[0] = k;
        v[n] = 0.0;
        rhs[0] = k;
        rhs[n] = 0.0;
        total_iterations += psor(&lower, &diag, &upper, &rhs, &payoff, &mut v, grid)?;
        tau += step;

        let exercise = (0..=n)
            .rev()
            .find(|&i| s[i] < k && v[i] - payoff[i] <= 1e-10 * k)
            .map(|i| s[i])
            .unwrap_or(0.0);
        boundary.push((tau, exercise));
    }

    let (value, delta) = local_cubic(&s, &v, params.spot);
    Ok(LcpSolution {
        value,
        delta,
        boundary,
        values: v,
        total_iterations,
    })
}

/// Value and slope at `x` of the cubic through the four nodes around it.
fn local_cubic(x: &[f64], y: &[f64], at: f64) -> (f64, f64) {
    let i = x.partition_point(|&v| v < at);
    let lo = i.saturating_sub(2).min(x.len() - 4);
    let idx = lo..lo + 4;
    let mut value = 0.0;
    let mut slope = 0.0;
    for a in idx.clone() {
        let mut l = 1.0;
        let mut dl = 0.0;
        for b in idx.clone().filter(|&b| b != a) {
            let denom = x[a] - x[b];
            dl = dl * (at - x[b]) / denom + l / denom;
            l *= (at - x[b]) / denom;
        }
        value += l * y[a];
        slope += dl * y[a];
    }
    (value, slope)
}

/// Dense solve with partial pivoting.
pub fn dense_solve(matrix: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension { expected: n, found: matrix.len() });
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut b = rhs.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() <= 1e-14 * scale || !a[pivot][col].is_finite() {
            return Err(Error::Singular { row: col });
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let l = a[row][col] / a[col][col];
            if l != 0.0 {
                for j in col..n {
                    a[row][j] -= l * a[col][j];
                }
                b[row] -= l * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// Weights with `sum_i w_i offsets_i^p = target` for each `(p, target)` pair.
pub fn moment_oracle(offsets: &[f64], powers: &[i32], targets: &[f64]) -> Result<Vec<f64>> {
    if powers.len() != offsets.len() || targets.len() != offsets.len() {
        return Err(Error::Dimension {
            expected: offsets.len(),
            found: powers.len().min(targets.len()),
        });
    }
    let matrix: Vec<Vec<f64>> = powers
        .iter()
        .map(|&p| offsets.iter().map(|o| o.powi(p)).collect())
        .collect();
    dense_solve(&matrix, targets)
}

fn falling(m: usize, d: usize) -> f64 {
    (0..d).map(|j| (m - j) as f64).product()
}

/// Worst relative residual of `stencil` over the monomials of degree `0..=degree`,
/// centred and scaled to the stencil's own extent.
pub fn polynomial_exactness(stencil: &Stencil, degree: usize) -> f64 {
    let all = stencil.lhs.iter().chain(&stencil.rhs);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        (lo.min(t.at), hi.max(t.at))
    });
    let centre = 0.5 * (lo + hi);
    let length = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for m in 0..=degree {
        let eval = |t: &crate::spatial::Term| -> f64 {
            if t.derivative > m {
                return 0.0;
            }
            let p = (m - t.derivative) as i32;
            t.weight * falling(m, t.derivative) * ((t.at - centre) / length).powi(p)
                / length.powi(t.derivative as i32)
        };
        let lhs: f64 = stencil.lhs.iter().map(eval).sum();
        let rhs: f64 = stencil.rhs.iter().map(eval).sum();
        let size: f64 = stencil
            .lhs
            .iter()
            .chain(&stencil.rhs)
            .map(|t| eval(t).abs())
            .sum();
        if size > 0.0 {
            worst = worst.max((lhs - rhs).abs() / size);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freeboundary::{staggered_weights, uniform_weights};
    use crate::grid::{build, GridSpec};
    use crate::model::scale;
    use crate::spatial::{assemble_u, assemble_w};

    fn params(strike: f64) -> ModelParams {
        ModelParams {
            strike,
            maturity: 0.5,
            sigma: 0.3,
            rate: 0.07,
            alpha: 0.5,
            spot: 100.0,
            x_max: 3.0,
        }
    }

    #[test]
    fn dense_solve_matches_known_vector() {
        let a = vec![
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ];
        let x = dense_solve(&a, &[3.0, 5.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let singular = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(matches!(dense_solve(&singular, &[1.0, 2.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn moment_oracle_reproduces_uniform_row() {
        let xbar = 0.1;
        let offsets = [1.0, 2.0, 3.0, 4.0].map(|i| i * xbar);
        let w = moment_oracle(
            &offsets,
            &[1, 2, 3, 4],
            &[25.0 / 6.0 * xbar, 2.0 * xbar * xbar, 0.0, 0.0],
        )
        .unwrap();
        let u = uniform_weights();
        for i in 0..4 {
            assert!((w[i] - u[i + 1]).abs() < 1e-9, "{i}: {}", w[i]);
        }
        let m5: f64 = w.iter().zip(&offsets).map(|(a, o)| a * o.powi(5)).sum();
        assert!(m5.abs() < 1e-12);
    }

    #[test]
    fn moment_oracle_rejects_coincident_offsets() {
        let r = moment_oracle(&[0.1, 0.1, 0.3], &[1, 2, 3], &[1.0, 0.0, 0.0]);
        assert!(matches!(r, Err(Error::Singular { .. })));
    }

    #[test]
    fn moment_oracle_matches_staggered_chain() {
        let h = 0.1;
        let s = staggered_weights(h, [0.5, 1.0, 1.5, 2.0]).unwrap();
        let o = s.offsets;
        let w = moment_oracle(
            &o[..3],
            &[3, 4, 5],
            &[-o[3].powi(3), -o[3].powi(4), -o[3].powi(5)],
        )
        .unwrap();
        for i in 0..3 {
            assert!((w[i] - s.b[i + 1]).abs() < 1e-8 * w[i].abs());
        }
    }

    #[test]
    fn interior_rows_are_fifth_order_exact() {
        let m = scale(params(100.0)).unwrap();
        let grid = build(&GridSpec::uniform(0.1, 3.0)).unwrap();
        let op = assemble_u(&grid, &m, grid.mode()).unwrap();
        let st = op.row_stencil(10, &grid);
        assert!(polynomial_exactness(&st, 5) < 1e-12);
        assert!(polynomial_exactness(&st, 6) > 1e-3);
        let robin = op.row_stencil(0, &grid);
        assert!(polynomial_exactness(&robin, 3) < 1e-12);
    }

    #[test]
    fn delta_first_row_exactness() {
        let m = scale(params(100.0)).unwrap();
        let grid = build(&GridSpec::uniform(0.05, 3.0)).unwrap();
        let op = assemble_w(&grid, &m, grid.mode()).unwrap();
        // u up to degree 5 means w = u' up to degree 4.
        assert!(polynomial_exactness(&op.row_stencil(0, &grid), 5) < 1e-12);
    }

    #[test]
    fn local_cubic_is_exact_for_cubics() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v - v).collect();
        let (v, d) = local_cubic(&x, &y, 2.2);
        assert!((v - (2.2f64.powi(3) - 2.2)).abs() < 1e-12);
        assert!((d - (3.0 * 2.2 * 2.2 - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn deep_out_of_the_money_put_is_nearly_worthless() {
        let mut p = params(40.0);
        p.alpha = 0.0;
        let sol = cn_psor_price(&p, &LcpGrid::new(&p, 400, 50)).unwrap();
        assert!(sol.value.abs() < 1e-4);
        let ds = 400.0 / 400.0;
        for (i, v) in sol.values.iter().enumerate() {
            assert!(*v >= (40.0 - i as f64 * ds).max(0.0) - 1e-12);
        }
    }

    #[test]
    fn rejects_short_domain() {
        let p = params(100.0);
        let mut g = LcpGrid::new(&p, 100, 10);
        g.s_max = 200.0;
        assert!(cn_psor_price(&p, &g).is_err());
    }
}
