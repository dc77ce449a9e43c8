//! Dormand-Prince 5(4) time stepping for the coupled value/delta/boundary system.
//!
//! The semi-discrete system is autonomous in `tau`: time enters only through the boundary
//! level, which every stage recovers from its own `u_0` by value matching. The boundary
//! log-derivative `g` and the PDE coefficients are refreshed from that stage as well.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::freeboundary::{boundary_derivative, q_profile, Estimator, DEFAULT_G_MAX};
use crate::model::{coefficients, CoefficientField, ScaledModel};
use crate::spatial::{rhs, Operators, SolverState};

/// Butcher tableau of an explicit embedded pair with seven stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tableau {
    pub c: [f64; 7],
    /// Strictly lower triangular; row `i` holds `a_{i,0..i}`.
    pub a: [[f64; 6]; 7],
    /// Propagated (fifth-order) weights.
    pub b5: [f64; 7],
    /// Embedded (fourth-order) weights.
    pub b4: [f64; 7],
}

pub const DORMAND_PRINCE: Tableau = Tableau {
    c: [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0],
    a: [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b5: [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    b4: [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ],
};

/// An autonomous system `y' = f(y)` whose state splits into two error blocks.
pub trait System {
    fn dim(&self) -> usize;

    /// Length of the first block (`u`); the rest is the second block (`w`).
    fn split(&self) -> usize {
        self.dim()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Result of one embedded step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedStep {
    pub y5: Vec<f64>,
    pub y4: Vec<f64>,
    /// Derivative at `y5`, reusable as the next first stage.
    pub last_stage: Vec<f64>,
    pub e_u: f64,
    pub e_w: f64,
    /// Number of right-hand-side evaluations performed.
    pub evaluations: usize,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// One Dormand-Prince step of size `k` from `y`. `first` is `f(y)` when already known.
pub fn embedded_step<S: System + ?Sized>(
    system: &S,
    y: &[f64],
    k: f64,
    first: Option<&[f64]>,
) -> Result<EmbeddedStep> {
    let n = system.dim();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, found: y.len() });
    }
    let t = &DORMAND_PRINCE;
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(7);
    let mut evaluations = 0;
    match first {
        Some(f) => stages.push(f.to_vec()),
        None => {
            let mut f = vec![0.0; n];
            system.eval(y, &mut f)?;
            evaluations += 1;
            stages.push(f);
        }
    }
    let mut stage_y = vec![0.0; n];
    for i in 1..7 {
        stage_y.copy_from_slice(y);
        for (j, kj) in stages.iter().enumerate() {
            let a = t.a[i][j];
            if a != 0.0 {
                for (s, d) in stage_y.iter_mut().zip(kj) {
                    *s += k * a * d;
                }
            }
        }
        let mut f = vec![0.0; n];
        system.eval(&stage_y, &mut f)?;
        evaluations += 1;
        stages.push(f);
    }
    // The last stage point is the fifth-order solution.
    let y5 = stage_y;
    let mut y4 = y.to_vec();
    for (j, kj) in stages.iter().enumerate() {
        for (s, d) in y4.iter_mut().zip(kj) {
            *s += k * t.b4[j] * d;
        }
    }
    let split = system.split();
    let e_u = max_abs_diff(&y5[..split], &y4[..split]);
    let e_w = max_abs_diff(&y5[split..], &y4[split..]);
    let last_stage = stages.pop().unwrap_or_default();
    Ok(EmbeddedStep { y5, y4, last_stage, e_u, e_w, evaluations })
}

/// Quantities recomputed from a stage's `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRefresh {
    pub s_f: f64,
    pub w0: f64,
    /// Clamped boundary log-derivative.
    pub g: f64,
    /// Whether the clamp changed `g`.
    pub clamped: bool,
    pub coeffs: CoefficientField,
}

/// The front-fixed value/delta system in flattened form `y = (u, w)`.
#[derive(Debug)]
pub struct FreeBoundarySystem {
    pub model: ScaledModel,
    pub ops: Operators,
    pub estimator: Estimator,
    /// Grid indices sampled by the estimator.
    pub gamma_nodes: [usize; 4],
    pub g_max: f64,
    clamp_events: AtomicUsize,
}

impl FreeBoundarySystem {
    pub fn new(
        model: ScaledModel,
        ops: Operators,
        estimator: Estimator,
        gamma_nodes: [usize; 4],
    ) -> Self {
        FreeBoundarySystem {
            model,
            ops,
            estimator,
            gamma_nodes,
            g_max: DEFAULT_G_MAX,
            clamp_events: AtomicUsize::new(0),
        }
    }

    /// Number of times `g` was clamped so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn stage_refresh(&self, u: &[f64]) -> Result<StageRefresh> {
        let e = self.model.strike;
        let s_f = e - u[0];
        if !(s_f > 0.0 && s_f <= e * (1.0 + 1e-8)) {
            return Err(Error::BoundaryEscape { s_f });
        }
        let grid = &self.ops.grid;
        let profile = q_profile(u, s_f, &self.gamma_nodes, &self.model, grid);
        let derivative = boundary_derivative(&profile, &self.estimator, &self.model, s_f)?;
        let (g, clamped) = derivative.clamped(self.g_max);
        if clamped {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        let coeffs = coefficients(&self.model, &grid.nodes()[..u.len()], s_f, g)?;
        Ok(StageRefresh { s_f, w0: -s_f, g, clamped, coeffs })
    }

    pub fn pack(&self, state: &SolverState) -> Vec<f64> {
        let mut y = state.u.clone();
        y.extend_from_slice(&state.w);
        y
    }

    pub fn unpack(&self, y: &[f64], tau: f64) -> SolverState {
        let m = self.ops.size();
        SolverState {
            tau,
            u: y[..m].to_vec(),
            w: y[m..].to_vec(),
            s_f: self.model.strike - y[0],
        }
    }
}

impl System for FreeBoundarySystem {
    fn dim(&self) -> usize {
        2 * self.ops.size() - 1
    }

    fn split(&self) -> usize {
        self.ops.size()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.ops.size();
        let refresh = self.stage_refresh(&y[..m])?;
        let state = self.unpack(y, 0.0);
        let d = rhs(&state, &self.ops, &refresh.coeffs, self.model.rate())?;
        out[..m].copy_from_slice(&d.u_tau);
        out[m..].copy_from_slice(&d.w_tau);
        Ok(())
    }
}

/// Adaptive step-size policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepController {
    pub eps: f64,
    pub rho: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub k0: f64,
    /// Consecutive rejections at `k_min` tolerated before giving up.
    pub max_stalled: usize,
    /// When false every step is accepted and only the step size adapts.
    pub reject: bool,
}

impl StepController {
    pub fn for_horizon(maturity: f64) -> Self {
        StepController {
            eps: 1e-6,
            rho: 0.9,
            f_min: 0.2,
            f_max: 5.0,
            k_min: 1e-12,
            k_max: maturity / 10.0,
            k0: 1e-6,
            max_stalled: 20,
            reject: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.f_min > 0.0 && self.f_min < 1.0 && self.f_max > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "growth clamp must satisfy 0 < f_min < 1 < f_max, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        if !(self.eps > 0.0 && self.k0 > 0.0 && self.k_min > 0.0 && self.k_max >= self.k_min) {
            return Err(Error::InvalidParameter(format!(
                "tolerance and step bounds must be positive, got eps = {}, k0 = {}, k in [{}, {}]",
                self.eps, self.k0, self.k_min, self.k_max
            )));
        }
        Ok(())
    }
}

/// Step size after an attempt with error `e` and size `k_old`.
pub fn next_step(e: f64, k_old: f64, controller: &StepController) -> f64 {
    let factor = if e == 0.0 {
        controller.f_max
    } else {
        let p = if e < controller.eps { 0.25 } else { 0.2 };
        controller.rho * (controller.eps / e).powf(p)
    };
    let factor = if factor.is_nan() { controller.f_min } else { factor };
    let k = factor.clamp(controller.f_min, controller.f_max) * k_old;
    k.clamp(controller.k_min, controller.k_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub accepted: bool,
    pub e_u: f64,
    pub e_w: f64,
    pub e: f64,
    pub k_used: f64,
    pub k_next: f64,
    pub stages: usize,
}

/// One adaptive attempt: an embedded step plus the accept decision and next step size.
pub fn dp54_step(
    system: &FreeBoundarySystem,
    state: &SolverState,
    k: f64,
    controller: &StepController,
) -> Result<(SolverState, SolverState, StepReport)> {
    let y = system.pack(state);
    let step = embedded_step(system, &y, k, None)?;
    let e = step.e_u.max(step.e_w);
    let report = StepReport {
        accepted: e <= controller.eps || !controller.reject,
        e_u: step.e_u,
        e_w: step.e_w,
        e,
        k_used: k,
        k_next: next_step(e, k, controller),
        stages: step.evaluations,
    };
    let tau = state.tau + k;
    Ok((system.unpack(&step.y5, tau), system.unpack(&step.y4, tau), report))
}

/// One row of the step log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLogEntry {
    /// Time at the start of the attempt.
    pub tau: f64,
    pub k: f64,
    pub e_u: f64,
    pub e_w: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvanceResult {
    pub state: SolverState,
    /// `(tau, s_f)` at the start and after every accepted step.
    pub boundary: Vec<(f64, f64)>,
    pub log: Vec<StepLogEntry>,
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted steps on which `s_f` increased.
    pub monotonicity_violations: usize,
    pub clamp_events: usize,
    pub evaluations: usize,
}

impl AdvanceResult {
    /// Sizes of the accepted steps.
    pub fn accepted_steps(&self) -> Vec<f64> {
        self.log.iter().filter(|e| e.accepted).map(|e| e.k).collect()
    }

    pub fn mean_accepted_step(&self) -> f64 {
        let steps = self.accepted_steps();
        if steps.is_empty() {
            0.0
        } else {
            steps.iter().sum::<f64>() / steps.len() as f64
        }
    }
}

/// Write the step log as CSV: `tau,k,e_u,e_w,accepted`.
pub fn write_step_log<W: Write>(log: &[StepLogEntry], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "tau,k,e_u,e_w,accepted")?;
    for e in log {
        writeln!(
            out,
            "{:.12e},{:.12e},{:.6e},{:.6e},{}",
            e.tau, e.k, e.e_u, e.e_w, e.accepted as u8
        )?;
    }
    Ok(())
}

/// Adaptive integration from `state.tau` to `horizon`.
pub fn advance(
    system: &FreeBoundarySystem,
    state: SolverState,
    controller: &StepController,
    horizon: f64,
) -> Result<AdvanceResult> {
    controller.validate()?;
    let clamps_before = system.clamp_events();
    let mut tau = state.tau;
    let mut s_f = state.s_f;
    let mut y = system.pack(&state);
    let mut result = AdvanceResult {
        state,
        boundary: vec![(tau, s_f)],
        log: Vec::new(),
        accepted: 0,
        rejected: 0,
        monotonicity_violations: 0,
        clamp_events: 0,
        evaluations: 0,
    };
    let mut first: Option<Vec<f64>> = None;
    let mut k = controller.k0.min(controller.k_max);
    let mut stalled = 0usize;
    let end_tolerance = 1e-14 * horizon.abs().max(1.0);

    while horizon - tau > end_tolerance {
        let remaining = horizon - tau;
        let last = k >= remaining;
        let k_try = if last { remaining } else { k };
        let attempt = embedded_step(system, &y, k_try, first.as_deref());
        let (accepted, k_next) = match attempt {
            Ok(step) => {
                result.evaluations += step.evaluations;
                let e = step.e_u.max(step.e_w);
                let accepted = e.is_finite() && (e <= controller.eps || !controller.reject);
                result.log.push(StepLogEntry {
                    tau,
                    k: k_try,
                    e_u: step.e_u,
                    e_w: step.e_w,
                    accepted,
                });
                let k_next = if e.is_finite() {
                    next_step(e, k_try, controller)
                } else {
                    (0.5 * k_try).max(controller.k_min)
                };
                if accepted {
                    tau = if last { horizon } else { tau + k_try };
                    let new_s_f = system.model.strike - step.y5[0];
                    if new_s_f > s_f {
                        result.monotonicity_violations += 1;
                    }
                    s_f = new_s_f;
                    y = step.y5;
                    first = Some(step.last_stage);
                    result.boundary.push((tau, s_f));
                }
                (accepted, k_next)
            }
            Err(Error::BoundaryEscape { s_f: escaped }) => {
                result.log.push(StepLogEntry {
                    tau,
                    k: k_try,
                    e_u: f64::INFINITY,
                    e_w: f64::INFINITY,
                    accepted: false,
                });
                if k_try <= controller.k_min {
                    return Err(Error::BoundaryEscape { s_f: escaped });
                }
                (false, (0.5 * k_try).max(controller.k_min))
            }
            Err(other) => return Err(other),
        };
        if accepted {
            result.accepted += 1;
            stalled = 0;
        } else {
            result.rejected += 1;
            if k_try <= controller.k_min {
                stalled += 1;
                if stalled > controller.max_stalled {
                    return Err(Error::Stagnation { tau, k: k_try });
                }
            }
        }
        k = k_next;
    }
    result.state = system.unpack(&y, tau);
    result.clamp_events = system.clamp_events() - clamps_before;
    Ok(result)
}

/// Fixed-step integration with the fifth-order weights; the last step is shortened to
/// land on `horizon`.
pub fn advance_fixed(
    system: &FreeBoundarySystem,
    state: SolverState,
    k: f64,
    horizon: f64,
) -> Result<AdvanceResult> {
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {k}")));
    }
    let clamps_before = system.clamp_events();
    let mut tau = state.tau;
    let mut s_f = state.s_f;
    let mut y = system.pack(&state);
    let mut result = AdvanceResult {
        state,
        boundary: vec![(tau, s_f)],
        log: Vec::new(),
        accepted: 0,
        rejected: 0,
        monotonicity_violations: 0,
        clamp_events: 0,
        evaluations: 0,
    };
    let mut first: Option<Vec<f64>> = None;
    let mut n = 0usize;
    let start = tau;
    let end_tolerance = 1e-14 * horizon.abs().max(1.0);
    while horizon - tau > end_tolerance {
        let next = (start + (n + 1) as f64 * k).min(horizon);
        let next = if horizon - next <= end_tolerance { horizon } else { next };
        let k_try = next - tau;
        let step = embedded_step(system, &y, k_try, first.as_deref())?;
        result.evaluations += step.evaluations;
        result.log.push(StepLogEntry {
            tau,
            k: k_try,
            e_u: step.e_u,
            e_w: step.e_w,
            accepted: true,
        });
        let new_s_f = system.model.strike - step.y5[0];
        if new_s_f > s_f {
            result.monotonicity_violations += 1;
        }
        s_f = new_s_f;
        tau = next;
        n += 1;
        y = step.y5;
        first = Some(step.last_stage);
        result.boundary.push((tau, s_f));
        result.accepted += 1;
    }
    result.state = system.unpack(&y, tau);
    result.clamp_events = system.clamp_events() - clamps_before;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;

    impl System for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = -y[0];
            Ok(())
        }
    }

    /// `y' = p'(t)` with `t` carried as a second component.
    struct Quartic;

    impl System for Quartic {
        fn dim(&self) -> usize {
            2
        }
        fn split(&self) -> usize {
            1
        }
        fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
            let t = y[1];
            out[0] = 1.0 - 2.0 * t + 3.0 * t * t + 4.0 * t.powi(3);
            out[1] = 1.0;
            Ok(())
        }
    }

    #[test]
    fn tableau_row_sums() {
        let t = &DORMAND_PRINCE;
        for i in 0..7 {
            let s: f64 = t.a[i].iter().sum();
            assert!((s - t.c[i]).abs() < 1e-15, "row {i}");
        }
        assert_eq!(&t.a[6][..], &t.b5[..6]);
        assert_eq!(t.b5[6], 0.0);
    }

    #[test]
    fn tableau_order_conditions() {
        let t = &DORMAND_PRINCE;
        let moment = |b: &[f64; 7], p: i32| -> f64 {
            b.iter().zip(&t.c).map(|(bi, ci)| bi * ci.powi(p)).sum()
        };
        for p in 0..5 {
            assert!((moment(&t.b5, p) - 1.0 / (p + 1) as f64).abs() < 1e-15, "b5 p = {p}");
        }
        for p in 0..4 {
            assert!((moment(&t.b4, p) - 1.0 / (p + 1) as f64).abs() < 1e-15, "b4 p = {p}");
        }
    }

    #[test]
    fn exponential_decay_step() {
        let step = embedded_step(&Decay, &[1.0], 0.1, None).unwrap();
        assert!((step.y5[0] - (-0.1f64).exp()).abs() < 1e-9);
        assert!((step.y5[0] - 0.904_837_418).abs() < 1e-9);
        assert_eq!(step.evaluations, 7);
        assert!((step.last_stage[0] + step.y5[0]).abs() < 1e-15);
    }

    #[test]
    fn quartics_integrate_exactly() {
        let step = embedded_step(&Quartic, &[0.0, 0.0], 0.5, None).unwrap();
        let t: f64 = 0.5;
        let exact = t - t * t + t.powi(3) + t.powi(4);
        assert!((step.y5[0] - exact).abs() < 1e-15);
        assert!(step.e_u < 1e-15);
        assert!(step.e_w < 1e-15);
    }

    #[test]
    fn error_ratio_under_halving() {
        let e1 = embedded_step(&Decay, &[1.0], 0.02, None).unwrap().e_u;
        let e2 = embedded_step(&Decay, &[1.0], 0.01, None).unwrap().e_u;
        let ratio = e1 / e2;
        assert!((ratio / 32.0 - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn fsal_stage_is_reused() {
        let a = embedded_step(&Decay, &[1.0], 0.1, None).unwrap();
        let b = embedded_step(&Decay, &a.y5, 0.1, Some(&a.last_stage)).unwrap();
        let c = embedded_step(&Decay, &a.y5, 0.1, None).unwrap();
        assert_eq!(b.evaluations, 6);
        assert_eq!(b.y5, c.y5);
    }

    #[test]
    fn step_size_examples() {
        let c = StepController::for_horizon(1.0);
        assert!((next_step(c.eps, 1e-3, &c) - 0.9e-3).abs() < 1e-18);
        assert!((next_step(1e-4 * c.eps, 1e-3, &c) - 5e-3).abs() < 1e-18);
        assert_eq!(next_step(1e4 * c.eps, 1e-3, &c), 0.2e-3);
        let loose = StepController { f_min: 0.1, ..c };
        let k = next_step(1e4 * c.eps, 1e-3, &loose);
        assert!((k / 1e-3 - 0.142_640).abs() < 1e-6);
        assert_eq!(next_step(0.0, 1e-3, &c), 5e-3);
        assert_eq!(next_step(0.0, 0.09, &c), 0.1);
        assert_eq!(next_step(1e9, 1e-12, &c), 1e-12);
    }

    #[test]
    fn controller_validation() {
        let mut c = StepController::for_horizon(1.0);
        assert!(c.validate().is_ok());
        c.rho = 1.5;
        assert!(c.validate().is_err());
        let mut c = StepController::for_horizon(1.0);
        c.f_max = 0.9;
        assert!(c.validate().is_err());
    }
}
