//! End-to-end pricing: grid and operator setup, time integration and the readout at the
//! spot.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::freeboundary::{staggered_weights, Estimator};
use crate::grid::{build, gamma_nodes, GridMode, GridSpec};
use crate::integrator::{
    advance, advance_fixed, AdvanceResult, FreeBoundarySystem, StepController, StepLogEntry,
};
use crate::model::{initial_state, scale, ModelParams, ScaledModel};
use crate::spatial::{Operators, SolverState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Uniform grid, extrapolated boundary estimator.
    Dcu,
    /// Locally refined grid, staggered boundary estimator.
    Dcsl,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dcu => "dcu",
            Scheme::Dcsl => "dcsl",
        }
    }

    pub fn grid_spec(self, h: f64, x_max: f64) -> GridSpec {
        match self {
            Scheme::Dcu => GridSpec::uniform(h, x_max),
            Scheme::Dcsl => GridSpec::refined(h, x_max),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dcu" => Ok(Scheme::Dcu),
            "dcsl" => Ok(Scheme::Dcsl),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

/// A priced contract ready to integrate.
#[derive(Debug)]
pub struct Pricer {
    pub scheme: Scheme,
    pub spec: GridSpec,
    pub system: FreeBoundarySystem,
}

impl Pricer {
    pub fn new(params: ModelParams, scheme: Scheme, spec: GridSpec) -> Result<Self> {
        let model = scale(params)?;
        let expected = match scheme {
            Scheme::Dcu => GridMode::Uniform,
            Scheme::Dcsl => GridMode::Refined,
        };
        if spec.mode != expected {
            return Err(Error::ModeMismatch {
                expected: expected.name(),
                found: spec.mode.name(),
            });
        }
        let grid = build(&spec)?;
        let nodes = gamma_nodes(&grid, &spec)?;
        let estimator = match scheme {
            Scheme::Dcu => {
                let g1 = spec.gamma[0];
                let regular = spec
                    .gamma
                    .iter()
                    .enumerate()
                    .all(|(i, g)| (g - (i + 1) as f64 * g1).abs() <= 1e-12 * g1);
                if !regular {
                    return Err(Error::InvalidGrid(format!(
                        "the uniform estimator needs equally spaced offsets, got {:?}",
                        spec.gamma
                    )));
                }
                Estimator::Uniform { xbar: g1 * spec.h }
            }
            Scheme::Dcsl => Estimator::Staggered(staggered_weights(spec.h, spec.gamma)?),
        };
        let ops = Operators::assemble(grid, &model)?;
        Ok(Pricer {
            scheme,
            spec,
            system: FreeBoundarySystem::new(model, ops, estimator, nodes),
        })
    }

    pub fn model(&self) -> &ScaledModel {
        &self.system.model
    }

    pub fn initial_state(&self) -> SolverState {
        initial_state(&self.system.model, &self.system.ops.grid)
    }

    /// Adaptive run to maturity.
    pub fn run(&self, controller: &StepController) -> Result<PriceReport> {
        let start = Instant::now();
        let result = advance(
            &self.system,
            self.initial_state(),
            controller,
            self.model().maturity(),
        )?;
        self.report(result, start.elapsed())
    }

    /// Fixed-step run to maturity.
    pub fn run_fixed(&self, k: f64) -> Result<PriceReport> {
        let start = Instant::now();
        let result = advance_fixed(&self.system, self.initial_state(), k, self.model().maturity())?;
        self.report(result, start.elapsed())
    }

    fn report(&self, result: AdvanceResult, elapsed: Duration) -> Result<PriceReport> {
        let model = self.model();
        let out = readout(&result.state, self.system.ops.grid.nodes(), model)?;
        let spot = model.spot();
        Ok(PriceReport {
            strike: model.params.strike,
            scaled_value: out.u,
            value: spot * out.u,
            delta: out.delta,
            boundary: spot * out.s_f,
            accepted: result.accepted,
            rejected: result.rejected,
            clamp_events: result.clamp_events,
            monotonicity_violations: result.monotonicity_violations,
            mean_step: result.mean_accepted_step(),
            boundary_history: result.boundary.iter().map(|(t, s)| (*t, spot * s)).collect(),
            step_log: result.log,
            wall_time: elapsed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceReport {
    pub strike: f64,
    /// `u` at the spot.
    pub scaled_value: f64,
    /// `S0 u`.
    pub value: f64,
    pub delta: f64,
    /// Unscaled exercise boundary at maturity.
    pub boundary: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub clamp_events: usize,
    pub monotonicity_violations: usize,
    pub mean_step: f64,
    /// `(tau, S_f)` after every accepted step.
    pub boundary_history: Vec<(f64, f64)>,
    pub step_log: Vec<StepLogEntry>,
    pub wall_time: Duration,
}

/// Scaled quantities at the spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Readout {
    /// `x* = -ln s_f`.
    pub x_star: f64,
    pub u: f64,
    pub w: f64,
    /// `dV/dS = w / (e^{x*} s_f)`.
    pub delta: f64,
    pub s_f: f64,
}

fn lagrange(x: &[f64], y: &[f64], at: f64, points: usize) -> f64 {
    let i = x.partition_point(|&v| v < at);
    let lo = i.saturating_sub(points / 2 + 1).min(x.len() - points);
    let idx = lo..lo + points;
    idx.clone()
        .map(|a| {
            let l: f64 = idx
                .clone()
                .filter(|&b| b != a)
                .map(|b| (at - x[b]) / (x[a] - x[b]))
                .product();
            l * y[a]
        })
        .sum()
}

/// Interpolate `u` and `w` at the spot with five-point Lagrange polynomials.
pub fn readout(state: &SolverState, nodes: &[f64], model: &ScaledModel) -> Result<Readout> {
    let s_f = state.s_f;
    if !(s_f > 0.0) {
        return Err(Error::BoundaryEscape { s_f });
    }
    let x_star = -s_f.ln();
    if x_star < 0.0 {
        // The spot lies in the exercise region.
        let u = model.strike - x_star.exp() * s_f;
        return Ok(Readout { x_star, u, w: -x_star.exp() * s_f, delta: -1.0, s_f });
    }
    let m = state.u.len();
    if nodes.len() != m + 1 || state.w.len() + 1 != m {
        return Err(Error::Dimension { expected: m + 1, found: nodes.len() });
    }
    let mut u = state.u.clone();
    u.push(0.0);
    let mut w = state.w_extended();
    w.push(0.0);
    let u_star = lagrange(nodes, &u, x_star, 5);
    let w_star = lagrange(nodes, &w, x_star, 5);
    Ok(Readout {
        x_star,
        u: u_star,
        w: w_star,
        delta: w_star / (x_star.exp() * s_f),
        s_f,
    })
}
