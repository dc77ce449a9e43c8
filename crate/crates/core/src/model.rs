//! Contract parameters, the spot scaling and the front-fixed PDE coefficients.
//!
//! Everything downstream works in units scaled by the spot `S0`: the strike becomes
//! `E = K/S0`, option values `u = V/S0` and the exercise boundary `s_f = S_f/S0`.
//! Log-moneyness is measured from the boundary, `x = ln(S / (S0 s_f))`, so the
//! free boundary always sits at `x = 0`.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spatial::SolverState;

/// Largest elasticity magnitude accepted.
pub const MAX_ABS_ALPHA: f64 = 1.0;

/// Market contract and CEV model inputs, in unscaled units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Strike `K`.
    pub strike: f64,
    /// Maturity `T` in years.
    pub maturity: f64,
    /// Volatility level at the spot (`sigma`).
    pub sigma: f64,
    /// Risk-free rate `r`.
    pub rate: f64,
    /// Elasticity `alpha`; local volatility is `sigma (S/S0)^alpha`.
    pub alpha: f64,
    /// Spot `S0`.
    pub spot: f64,
    /// Far-field cut in log-moneyness.
    pub x_max: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("strike", self.strike),
            ("maturity", self.maturity),
            ("sigma", self.sigma),
            ("spot", self.spot),
            ("x_max", self.x_max),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rate must be non-negative, got {}",
                self.rate
            )));
        }
        if !(self.alpha.is_finite() && self.alpha.abs() <= MAX_ABS_ALPHA) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [-1, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// [`ModelParams`] after scaling by the spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledModel {
    pub params: ModelParams,
    /// Scaled strike `E = K/S0`.
    pub strike: f64,
    /// `beta = 2 alpha`.
    pub beta: f64,
}

impl ScaledModel {
    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }

    pub fn rate(&self) -> f64 {
        self.params.rate
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn spot(&self) -> f64 {
        self.params.spot
    }

    pub fn maturity(&self) -> f64 {
        self.params.maturity
    }
}

/// Scale the contract by its spot.
pub fn scale(params: ModelParams) -> Result<ScaledModel> {
    params.validate()?;
    Ok(ScaledModel {
        params,
        strike: params.strike / params.spot,
        beta: 2.0 * params.alpha,
    })
}

/// The four PDE coefficients evaluated node by node at one boundary level.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    /// Diffusion `sigma^2 (e^x s_f)^beta / 2`.
    pub xi1: Vec<f64>,
    /// Convection of `u` through `w`: `r + g - xi1`.
    pub xi2: Vec<f64>,
    /// Coupling of `u_xx` into the delta equation: `xi2 + alpha sigma^2 (e^x s_f)^beta`.
    pub xi3: Vec<f64>,
    /// Reaction of the delta equation: `r + alpha sigma^2 (e^x s_f)^beta`.
    pub xi4: Vec<f64>,
}

impl CoefficientField {
    pub fn len(&self) -> usize {
        self.xi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi1.is_empty()
    }
}

/// Evaluate the coefficients at nodes `x` for boundary `s_f` and log-derivative
/// `g = s_f'/s_f`.
pub fn coefficients(model: &ScaledModel, x: &[f64], s_f: f64, g: f64) -> Result<CoefficientField> {
    if !(s_f > 0.0 && s_f.is_finite()) {
        return Err(Error::Domain(format!("boundary level must be positive, got {s_f}")));
    }
    let sigma2 = model.sigma() * model.sigma();
    let r = model.rate();
    let alpha = model.alpha();
    let n = x.len();
    let mut field = CoefficientField {
        xi1: Vec::with_capacity(n),
        xi2: Vec::with_capacity(n),
        xi3: Vec::with_capacity(n),
        xi4: Vec::with_capacity(n),
    };
    for &xi in x {
        let p = sigma2 * (xi.exp() * s_f).powf(model.beta);
        let xi1 = 0.5 * p;
        let xi2 = r + g - xi1;
        field.xi1.push(xi1);
        field.xi2.push(xi2);
        field.xi3.push(xi2 + alpha * p);
        field.xi4.push(r + alpha * p);
    }
    Ok(field)
}

/// State at `tau = 0`: zero value and delta off the boundary, boundary at the strike.
pub fn initial_state(model: &ScaledModel, grid: &Grid) -> SolverState {
    let m = grid.last_index();
    SolverState {
        tau: 0.0,
        u: vec![0.0; m],
        w: vec![0.0; m - 1],
        s_f: model.strike,
    }
}
