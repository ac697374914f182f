use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::smoothing::{sg_derivative, FilterParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivMethod {
    Central,
    Sg(FilterParams),
}

/// Time derivative estimates aligned row-for-row with their trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSeries {
    pub values: DMatrix<f64>,
    pub method: DerivMethod,
}

/// Central differences inside, second-order one-sided stencils at the ends.
fn central(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
    }
    out[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
    out[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
    out
}

pub fn estimate_derivatives(traj: &Trajectory, method: DerivMethod) -> Result<DerivativeSeries> {
    let n = traj.len();
    let mut values = DMatrix::zeros(n, traj.dim());
    for j in 0..traj.dim() {
        let col = traj.column(j);
        let d = match method {
            DerivMethod::Central => {
                if n < 3 {
                    return Err(Error::InvalidArgument("central differences need at least 3 states".into()));
                }
                central(&col, traj.dt)
            }
            DerivMethod::Sg(params) => {
                if n < 5 || n < params.h {
                    return Err(Error::InvalidArgument(format!(
                        "filter derivative needs at least max(5, {}) states, got {n}",
                        params.h
                    )));
                }
                sg_derivative(&col, params, traj.dt)?
            }
        };
        values.set_column(j, &nalgebra::DVector::from_vec(d));
    }
    Ok(DerivativeSeries { values, method })
}

/// Central-difference derivative of every column of a row-per-sample matrix.
pub(crate) fn central_rows(x: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        out.set_column(j, &nalgebra::DVector::from_vec(central(&col, dt)));
    }
    out
}
