//! Boundary log-derivative `g = s_f'/s_f` from the square-root profile.
//!
//! With `Q = sqrt(u - E + e^x s_f)`, `Q(0) = 0` and the PDE pins `Q'(0)` and `Q''(0)` in
//! terms of `s_f` and `g`. A one-sided five-point functional `sum b_i Q(x_i) = c Q'(0) +
//! d Q''(0)`, exact through degree five, then turns sampled `Q` values into `g`.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ScaledModel;

/// Clamp applied to `g` by the integrator.
pub const DEFAULT_G_MAX: f64 = 1e6;

/// `Q` sampled at a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtProfile {
    pub values: Vec<f64>,
}

pub fn q_profile(
    u: &[f64],
    s_f: f64,
    nodes: &[usize],
    model: &ScaledModel,
    grid: &Grid,
) -> SqrtProfile {
    let x = grid.nodes();
    let values = nodes
        .iter()
        .map(|&i| {
            let ui = u.get(i).copied().unwrap_or(0.0);
            (ui - model.strike + x[i].exp() * s_f).max(0.0).sqrt()
        })
        .collect();
    SqrtProfile { values }
}

/// `Q'(0) = sqrt(rE) / (sigma s_f^(beta/2))`.
pub fn q_prime_x0(model: &ScaledModel, s_f: f64) -> f64 {
    (model.rate() * model.strike).sqrt() / (model.sigma() * s_f.powf(0.5 * model.beta))
}

/// `nu = r - sigma^2 s_f^beta / 2`, the part of `xi2(x=0)` that does not involve `g`.
pub fn nu(model: &ScaledModel, s_f: f64) -> f64 {
    model.rate() - 0.5 * model.sigma().powi(2) * s_f.powf(model.beta)
}

/// `Q''(0)` given the boundary log-derivative `g`.
pub fn q_second_x0(model: &ScaledModel, s_f: f64, g: f64) -> f64 {
    let root = (model.rate() * model.strike).sqrt();
    let sigma = model.sigma();
    let beta = model.beta;
    let xi2 = nu(model, s_f) + g;
    -beta * root / (3.0 * sigma * s_f.powf(0.5 * beta))
        - 2.0 * xi2 * root / (3.0 * sigma.powi(3) * s_f.powf(1.5 * beta))
}

/// Weights of the extrapolated expansion at offsets `0, xbar, ..., 4 xbar`.
pub fn uniform_weights() -> [f64; 5] {
    [-415.0 / 72.0, 8.0, -3.0, 8.0 / 9.0, -1.0 / 8.0]
}

/// Weights of the staggered functional at offsets `0, gamma_1 h, ..., gamma_4 h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaggeredWeights {
    /// `b_0 .. b_4`; `b_4 = 1`.
    pub b: [f64; 5],
    /// Coefficient of `Q'(0)`.
    pub c0: f64,
    /// Coefficient of `Q''(0)`.
    pub d0: f64,
    /// Intermediates `a_3 .. a_8`.
    pub a: [f64; 6],
    /// Sample offsets `gamma_i h`.
    pub offsets: [f64; 4],
}

impl StaggeredWeights {
    /// Worst violation of the moment conditions, relative to the largest term.
    pub fn moment_residual(&self) -> f64 {
        let b = &self.b[1..];
        let o = &self.offsets;
        let scale = |m: i32| {
            b.iter()
                .zip(o)
                .map(|(bi, oi)| (bi * oi.powi(m)).abs())
                .fold(0.0f64, f64::max)
        };
        let moment = |m: i32| b.iter().zip(o).map(|(bi, oi)| bi * oi.powi(m)).sum::<f64>();
        let mut worst = ((moment(1) - self.c0) / scale(1)).abs();
        worst = worst.max(((moment(2) / 2.0 - self.d0) / scale(2)).abs());
        for m in 3..=5 {
            worst = worst.max((moment(m) / scale(m)).abs());
        }
        worst
    }
}

/// Closed-form staggered weights for offsets `gamma_i h`.
pub fn staggered_weights(h: f64, gamma: [f64; 4]) -> Result<StaggeredWeights> {
    if !(h > 0.0) {
        return Err(Error::DegenerateOffsets(format!("h must be positive, got {h}")));
    }
    if gamma[0] <= 0.0 || gamma.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateOffsets(format!(
            "offsets must be positive and strictly increasing, got {gamma:?}"
        )));
    }
    let [h1, h2, h3, h4] = gamma.map(|g| g * h);
    let a3 = (h2 / h1).powi(5);
    let a4 = (h3 / h2).powi(5);
    let a5 = (h4 / h3).powi(5);
    let a6 = (a4 * h2.powi(4) - h3.powi(4)) / (a3 * h1.powi(4) - h2.powi(4));
    let a7 = (a5 * h3.powi(4) - h4.powi(4)) / (a4 * h2.powi(4) - h3.powi(4));
    let a8 = (a7 * (a4 * h2.powi(3) - h3.powi(3)) - (a5 * h3.powi(3) - h4.powi(3)))
        / (a6 * (a3 * h1.powi(3) - h2.powi(3)) - (a4 * h2.powi(3) - h3.powi(3)));

    // Eliminating the fifth, fourth and third moments in turn leaves alternating signs
    // on the odd-indexed samples.
    let b1 = -a8 * a6 * a3;
    let b2 = a6 * a8 + a4 * a8 + a4 * a7;
    let b3 = -(a5 + a7 + a8);
    let b4 = 1.0;
    let b0 = a8 * (a6 * (a3 - 1.0) - (a4 - 1.0)) - (a7 * (a4 - 1.0) - (a5 - 1.0));
    let c0 = -(a8 * (a6 * (a3 * h1 - h2) - (a4 * h2 - h3))
        - (a7 * (a4 * h2 - h3) - (a5 * h3 - h4)));
    let d0 = -0.5
        * (a8 * (a6 * (a3 * h1 * h1 - h2 * h2) - (a4 * h2 * h2 - h3 * h3))
            - (a7 * (a4 * h2 * h2 - h3 * h3) - (a5 * h3 * h3 - h4 * h4)));

    let mut weights = StaggeredWeights {
        b: [b0, b1, b2, b3, b4],
        c0,
        d0,
        a: [a3, a4, a5, a6, a7, a8],
        offsets: [h1, h2, h3, h4],
    };
    if !(weights.moment_residual() <= 1e-8) {
        weights = moment_weights(weights.offsets, weights.a)?;
    }
    Ok(weights)
}

/// Direct solve of the third to fifth moment conditions with `b_4 = 1`.
fn moment_weights(offsets: [f64; 4], a: [f64; 6]) -> Result<StaggeredWeights> {
    let [h1, h2, h3, h4] = offsets;
    let m = [
        [h1.powi(3), h2.powi(3), h3.powi(3)],
        [h1.powi(4), h2.powi(4), h3.powi(4)],
        [h1.powi(5), h2.powi(5), h3.powi(5)],
    ];
    let rhs = [-h4.powi(3), -h4.powi(4), -h4.powi(5)];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 || !d.is_finite() {
        return Err(Error::DegenerateOffsets(format!("{offsets:?}")));
    }
    let mut b = [0.0; 3];
    for (col, slot) in b.iter_mut().enumerate() {
        let mut mc = m;
        for (row, r) in rhs.iter().enumerate() {
            mc[row][col] = *r;
        }
        *slot = det(&mc) / d;
    }
    let full = [b[0], b[1], b[2], 1.0];
    let c0 = full.iter().zip(&offsets).map(|(bi, o)| bi * o).sum();
    let d0 = 0.5 * full.iter().zip(&offsets).map(|(bi, o)| bi * o * o).sum::<f64>();
    Ok(StaggeredWeights {
        b: [-full.iter().sum::<f64>(), b[0], b[1], b[2], 1.0],
        c0,
        d0,
        a,
        offsets,
    })
}

/// Which one-sided functional recovers `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// Offsets `xbar, 2 xbar, 3 xbar, 4 xbar`.
    Uniform { xbar: f64 },
    Staggered(StaggeredWeights),
}

impl Estimator {
    /// Weights on `Q(x_1) .. Q(x_4)`.
    pub fn sample_weights(&self) -> [f64; 4] {
        match self {
            Estimator::Uniform { .. } => {
                let w = uniform_weights();
                [w[1], w[2], w[3], w[4]]
            }
            Estimator::Staggered(s) => [s.b[1], s.b[2], s.b[3], s.b[4]],
        }
    }

    /// Coefficient of `Q'(0)`.
    pub fn first_coefficient(&self) -> f64 {
        match self {
            Estimator::Uniform { xbar } => 25.0 / 6.0 * xbar,
            Estimator::Staggered(s) => s.c0,
        }
    }

    /// Coefficient of `Q''(0)`.
    pub fn second_coefficient(&self) -> f64 {
        match self {
            Estimator::Uniform { xbar } => xbar * xbar,
            Estimator::Staggered(s) => s.d0,
        }
    }

    pub fn offsets(&self) -> [f64; 4] {
        match self {
            Estimator::Uniform { xbar } => [1.0, 2.0, 3.0, 4.0].map(|i| i * xbar),
            Estimator::Staggered(s) => s.offsets,
        }
    }
}

/// `g` together with the four terms it is assembled from (`g = (m[1] - m[2] + m[3]) / m[0]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryDerivative {
    pub g: f64,
    pub components: [f64; 4],
}

impl BoundaryDerivative {
    /// `g` restricted to `[-g_max, 0]`, and whether the restriction changed it.
    pub fn clamped(&self, g_max: f64) -> (f64, bool) {
        if !self.g.is_finite() {
            return (-g_max, true);
        }
        let g = self.g.clamp(-g_max, 0.0);
        (g, g != self.g)
    }
}

pub fn boundary_derivative(
    profile: &SqrtProfile,
    estimator: &Estimator,
    model: &ScaledModel,
    s_f: f64,
) -> Result<BoundaryDerivative> {
    if !(s_f > 0.0) {
        return Err(Error::Domain(format!("boundary level must be positive, got {s_f}")));
    }
    if profile.values.len() != 4 {
        return Err(Error::Dimension {
            expected: 4,
            found: profile.values.len(),
        });
    }
    let root = (model.rate() * model.strike).sqrt();
    let sigma = model.sigma();
    let beta = model.beta;
    let c = estimator.first_coefficient();
    let d = estimator.second_coefficient();
    let low = sigma * s_f.powf(0.5 * beta);
    let high = sigma.powi(3) * s_f.powf(1.5 * beta);

    let m_g = -2.0 * d * root / (3.0 * high);
    let m_nu = beta * d * root / (3.0 * low) + 2.0 * nu(model, s_f) * d * root / (3.0 * high);
    let m_slope = c * root / low;
    let m_samples: f64 = estimator
        .sample_weights()
        .iter()
        .zip(&profile.values)
        .map(|(w, q)| w * q)
        .sum();
    Ok(BoundaryDerivative {
        g: (m_nu - m_slope + m_samples) / m_g,
        components: [m_g, m_nu, m_slope, m_samples],
    })
}
