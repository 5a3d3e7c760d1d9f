//! Simulation, analytics, and calibration toolkit for a linear stochastic
//! volatility model whose stationary volatility is Inverse Gamma distributed.
//!
//! The log-price X and the volatility driver Y follow
//! `dX = sqrt(c) Y dW1`, `dY = (aY + b) dt + sqrt(c) Y dW2` with Wiener
//! correlation rho, mean reversion a < 0, and b, c > 0. Time is measured in
//! years with 250 trading days per year.
//!
//! Module map:
//! - [`exppoly`]: exact closed-form solutions of linear ODEs with exponential
//!   polynomial forcing — the engine behind every moment formula.
//! - [`model`]: parameters, derived quantities, stationary moments/density.
//! - [`analytics`]: transient and stationary moments of X and Y, leverage
//!   correlation, squared-return autocorrelation.
//! - [`oracles`]: independent numerical checks (Runge-Kutta, quadrature,
//!   a Volterra integral-equation solver for the leverage function).
//! - [`simulate`]: Monte Carlo paths with reproducible per-path RNG streams.
//! - [`estimate`]: calibration from daily returns via moment estimators and a
//!   leverage-decay fit.
//! - [`data`]: price/return ingestion and empirical densities.

pub mod analytics;
pub mod data;
pub mod error;
pub mod estimate;
pub mod exppoly;
pub mod model;
pub mod oracles;
pub mod simulate;

pub use analytics::{Curve, CurveKind, InitialYMoments, VolState};
pub use data::{EmpiricalPdf, PriceSeries, ReturnSeries};
pub use error::{Error, Result};
pub use estimate::{CalibrateOptions, CalibrationReport, LeverageFit, SampleEstimators};
pub use exppoly::ExpPoly;
pub use model::{ConsistencyReport, DerivedQuantities, ModelParams, TRADING_DAY, TRADING_DAYS_PER_YEAR};
pub use simulate::{InitCondition, PathEnsemble, Scheme, SimConfig};
