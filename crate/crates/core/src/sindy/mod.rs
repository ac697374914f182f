//! Sparse regression of state derivatives onto a term library, scoring of
//! fitted equations, and their integration.

mod derivs;
mod equation;
mod stlsq;

pub(crate) use derivs::central_rows;
pub use derivs::{estimate_derivatives, DerivMethod, DerivativeSeries};
pub use equation::{
    fitness, linear_eigenvalues, predict_trajectory, r_squared, CoefficientMatrix, Equation, Metrics,
    DEFAULT_GAMMA, EPS_TERM,
};
pub use stlsq::{column_scales, fit_coefficients, fit_equation, FitOptions, DEFAULT_ETA, DEFAULT_THRESHOLD};
