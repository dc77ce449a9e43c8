//! American put pricing under the constant-elasticity-of-variance model.
//!
//! The free boundary is fixed at `x = 0` by a log change of variables; value and delta are
//! evolved together with compact fourth-order differences in space and an adaptive
//! Dormand-Prince 5(4) pair in time.
//!
//! ```no_run
//! use cev_fb::{ModelParams, Pricer, Scheme, StepController};
//!
//! let params = ModelParams {
//!     strike: 10.0, maturity: 0.5, sigma: 0.2, rate: 0.05,
//!     alpha: -1.0 / 3.0, spot: 10.0, x_max: 3.0,
//! };
//! let pricer = Pricer::new(params, Scheme::Dcsl, Scheme::Dcsl.grid_spec(0.06, 3.0))?;
//! let report = pricer.run(&StepController::for_horizon(params.maturity))?;
//! println!("{:.6} {:.6}", report.value, report.delta);
//! # Ok::<(), cev_fb::Error>(())
//! ```

pub mod banded;
pub mod error;
pub mod freeboundary;
pub mod grid;
pub mod integrator;
pub mod model;
pub mod oracle;
pub mod pricer;
pub mod spatial;

pub use error::{Error, Result};
pub use grid::{GridMode, GridSpec};
pub use integrator::StepController;
pub use model::{ModelParams, ScaledModel};
pub use pricer::{PriceReport, Pricer, Scheme};
