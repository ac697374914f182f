use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::equation::{fitness, r_squared, CoefficientMatrix, Equation, Metrics, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::termlib::{evaluate_library, TermLibrary};

pub const DEFAULT_ETA: f64 = 0.01;
pub const DEFAULT_THRESHOLD: f64 = 0.05;
const MAX_ROUNDS: usize = 20;
const RIDGE: f64 = 1e-12;
const SINGULAR_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub eta: f64,
    pub threshold: f64,
    pub gamma: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            threshold: DEFAULT_THRESHOLD,
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// Root-mean-square of each design column.
pub fn column_scales(design: &DMatrix<f64>) -> Vec<f64> {
    let n = design.nrows().max(1) as f64;
    design
        .column_iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
        .collect()
}

/// Sequentially thresholded least squares, one column of `derivs` at a
/// time. Columns are scaled to unit mean square first; a normalized
/// coefficient survives a round when its magnitude reaches
/// `threshold + eta / 2`, which is where an L1 penalty of weight `eta`
/// would zero an orthonormal coordinate under the mean-squared loss.
pub fn fit_coefficients(
    design: &DMatrix<f64>,
    derivs: &DMatrix<f64>,
    eta: f64,
    threshold: f64,
) -> Result<CoefficientMatrix> {
    fit_named(design, derivs, eta, threshold, None)
}

pub(crate) fn fit_named(
    design: &DMatrix<f64>,
    derivs: &DMatrix<f64>,
    eta: f64,
    threshold: f64,
    names: Option<&[String]>,
) -> Result<CoefficientMatrix> {
    let (n, k) = design.shape();
    if derivs.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "design has {n} rows, derivatives have {}",
            derivs.nrows()
        )));
    }
    if !(eta >= 0.0) || !(threshold >= 0.0) {
        return Err(Error::InvalidArgument("eta and threshold must be non-negative".into()));
    }
    if n <= k {
        log::warn!("underdetermined fit: {n} samples for {k} terms");
    }
    let name = |j: usize| names.map_or_else(|| format!("column {j}"), |ns| ns[j].clone());
    let scales = column_scales(design);
    if let Some(j) = scales.iter().position(|s| *s == 0.0 || !s.is_finite()) {
        return Err(Error::SingularDesign { terms: vec![name(j)] });
    }
    let mut x = design.clone();
    for (j, s) in scales.iter().enumerate() {
        x.column_mut(j).scale_mut(1.0 / s);
    }
    let cutoff = threshold + eta / 2.0;
    let mut values = DMatrix::zeros(k, derivs.ncols());
    for col in 0..derivs.ncols() {
        let y = derivs.column(col).into_owned();
        let mut support: Vec<usize> = (0..k).collect();
        let mut coef = DVector::zeros(0);
        for _ in 0..MAX_ROUNDS {
            if support.is_empty() {
                break;
            }
            coef = solve_support(&x, &y, &support, &name)?;
            let kept: Vec<usize> = support
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() >= cutoff)
                .map(|(j, _)| *j)
                .collect();
            if kept.len() == support.len() {
                break;
            }
            support = kept;
        }
        if !support.is_empty() && coef.len() != support.len() {
            coef = solve_support(&x, &y, &support, &name)?;
        }
        for (pos, &j) in support.iter().enumerate() {
            values[(j, col)] = coef[pos] / scales[j];
        }
    }
    Ok(CoefficientMatrix {
        values,
        scales,
        library_ref: String::new(),
    })
}

fn solve_support(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
    name: &dyn Fn(usize) -> String,
) -> Result<DVector<f64>> {
    let n = x.nrows() as f64;
    let xs = x.select_columns(support);
    let mut gram = xs.transpose() * &xs / n;
    let eig = gram.clone().symmetric_eigen();
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(min > SINGULAR_RATIO * max) {
        let v = eig.eigenvectors.column(imin);
        let mut terms: Vec<String> = support
            .iter()
            .enumerate()
            .filter(|(p, _)| v[*p].abs() > 0.1)
            .map(|(_, &j)| name(j))
            .collect();
        if terms.is_empty() {
            terms = support.iter().map(|&j| name(j)).collect();
        }
        return Err(Error::SingularDesign { terms });
    }
    for i in 0..gram.nrows() {
        gram[(i, i)] += RIDGE;
    }
    let rhs = xs.transpose() * y / n;
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::SingularDesign {
            terms: support.iter().map(|&j| name(j)).collect(),
        })
}

/// Fits and scores one library against states and their derivatives.
pub fn fit_equation(
    library: &TermLibrary,
    states: &DMatrix<f64>,
    derivs: &DMatrix<f64>,
    opts: FitOptions,
) -> Result<Equation> {
    let design = evaluate_library(library, states)?;
    let mut coeffs = fit_named(&design, derivs, opts.eta, opts.threshold, Some(&library.names()))?;
    coeffs.library_ref = library.signature();
    let pred = &design * &coeffs.values;
    let r2 = r_squared(&pred, derivs)?;
    let mut eq = Equation::new(library.clone(), coeffs, opts.eta)?;
    let length = eq.length();
    eq.metrics = Some(Metrics {
        r2,
        length,
        fitness: fitness(r2, length, opts.gamma),
    });
    Ok(eq)
}
