use std::fmt;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4, Trajectory};
use crate::error::{Error, Result};
use crate::termlib::{evaluate_library, Factor, Term, TermLibrary};

/// Magnitude (after column scaling) above which a coefficient counts as active.
pub const EPS_TERM: f64 = 1e-3;
pub const DEFAULT_GAMMA: f64 = 0.02;

/// `k x d` coefficients, column `j` giving `dz_j/dt`. `scales` holds the
/// root-mean-square of each design column used when fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub values: DMatrix<f64>,
    pub scales: Vec<f64>,
    pub library_ref: String,
}

impl CoefficientMatrix {
    pub fn unscaled(values: DMatrix<f64>, library_ref: String) -> Self {
        let scales = vec![1.0; values.nrows()];
        Self {
            values,
            scales,
            library_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub length: usize,
    pub fitness: f64,
}

/// `dz/dt = Theta(z) Xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EquationJson", try_from = "EquationJson")]
pub struct Equation {
    pub library: TermLibrary,
    pub coeffs: CoefficientMatrix,
    pub eta: f64,
    pub metrics: Option<Metrics>,
}

#[derive(Serialize, Deserialize)]
struct EquationJson {
    terms: Vec<String>,
    coeffs: Vec<Vec<f64>>,
    #[serde(default)]
    scales: Option<Vec<f64>>,
    eta: f64,
    r2: Option<f64>,
    length: Option<usize>,
    fitness: Option<f64>,
}

impl From<Equation> for EquationJson {
    fn from(e: Equation) -> Self {
        let coeffs = (0..e.coeffs.values.nrows())
            .map(|i| e.coeffs.values.row(i).iter().copied().collect())
            .collect();
        EquationJson {
            terms: e.library.names(),
            coeffs,
            scales: Some(e.coeffs.scales.clone()),
            eta: e.eta,
            r2: e.metrics.map(|m| m.r2),
            length: e.metrics.map(|m| m.length),
            fitness: e.metrics.map(|m| m.fitness),
        }
    }
}

impl TryFrom<EquationJson> for Equation {
    type Error = Error;

    fn try_from(j: EquationJson) -> Result<Self> {
        let k = j.terms.len();
        let d = j.coeffs.first().map_or(0, Vec::len);
        if j.coeffs.len() != k || d == 0 || j.coeffs.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("coefficient array does not match terms".into()));
        }
        let terms = j
            .terms
            .iter()
            .map(|t| Term::parse(t, d))
            .collect::<Result<Vec<_>>>()?;
        let library = TermLibrary::new(terms, d)?;
        let values = DMatrix::from_fn(k, d, |r, c| j.coeffs[r][c]);
        let scales = j.scales.unwrap_or_else(|| vec![1.0; k]);
        let coeffs = CoefficientMatrix {
            values,
            scales,
            library_ref: library.signature(),
        };
        let metrics = match (j.r2, j.length, j.fitness) {
            (Some(r2), Some(length), Some(fitness)) => Some(Metrics { r2, length, fitness }),
            _ => None,
        };
        let mut eq = Equation::new(library, coeffs, j.eta)?;
        eq.metrics = metrics;
        Ok(eq)
    }
}

impl Equation {
    pub fn new(library: TermLibrary, coeffs: CoefficientMatrix, eta: f64) -> Result<Self> {
        if coeffs.values.nrows() != library.len() || coeffs.values.ncols() != library.dim() {
            return Err(Error::InvalidArgument(format!(
                "coefficients are {}x{}, library needs {}x{}",
                coeffs.values.nrows(),
                coeffs.values.ncols(),
                library.len(),
                library.dim()
            )));
        }
        if coeffs.scales.len() != library.len() {
            return Err(Error::InvalidArgument("one scale per term required".into()));
        }
        if coeffs.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(Self {
            library,
            coeffs,
            eta,
            metrics: None,
        })
    }

    /// Builds an unscaled equation from `(term, coefficient per dimension)`.
    pub fn from_terms(entries: &[(&str, Vec<f64>)], dim: usize) -> Result<Self> {
        let terms = entries
            .iter()
            .map(|(t, _)| Term::parse(t, dim))
            .collect::<Result<Vec<_>>>()?;
        let library = TermLibrary::new(terms, dim)?;
        let values = DMatrix::from_fn(entries.len(), dim, |i, j| entries[i].1[j]);
        let sig = library.signature();
        Self::new(library, CoefficientMatrix::unscaled(values, sig), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.library.dim()
    }

    pub fn is_active(&self, term: usize, col: usize) -> bool {
        (self.coeffs.values[(term, col)] * self.coeffs.scales[term]).abs() > EPS_TERM
    }

    pub fn length(&self) -> usize {
        (0..self.library.len())
            .map(|i| (0..self.dim()).filter(|&j| self.is_active(i, j)).count())
            .sum()
    }

    /// Coefficient of `term` in `dz_col/dt`, zero when absent or inactive.
    pub fn coefficient(&self, term: &Term, col: usize) -> f64 {
        match self.library.index_of(term) {
            Some(i) if self.is_active(i, col) => self.coeffs.values[(i, col)],
            _ => 0.0,
        }
    }

    pub fn rhs(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, t) in self.library.terms().iter().enumerate() {
            let row = self.coeffs.values.row(i);
            if row.iter().all(|c| *c == 0.0) {
                continue;
            }
            let theta = t.eval(z);
            for (o, c) in out.iter_mut().zip(row.iter()) {
                *o += theta * c;
            }
        }
    }

    /// Right-hand side evaluated at every row of `states`.
    pub fn predict_derivatives(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(evaluate_library(&self.library, states)? * &self.coeffs.values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.dim() {
            write!(f, "dz{}/dt =", j + 1)?;
            let mut any = false;
            for (i, t) in self.library.terms().iter().enumerate() {
                if !self.is_active(i, j) {
                    continue;
                }
                let c = self.coeffs.values[(i, j)];
                let sign = if c < 0.0 { '-' } else { '+' };
                if any {
                    write!(f, " {sign} {:.4}", c.abs())?;
                } else {
                    write!(f, " {}{:.4}", if c < 0.0 { "-" } else { "" }, c.abs())?;
                }
                if !t.is_constant() {
                    write!(f, " {t}")?;
                }
                any = true;
            }
            if !any {
                write!(f, " 0")?;
            }
            if j + 1 < self.dim() {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Pooled coefficient of determination, each column centred on its own mean.
pub fn r_squared(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != actual.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch {:?} vs {:?}",
            pred.shape(),
            actual.shape()
        )));
    }
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for j in 0..actual.ncols() {
        let col = actual.column(j);
        let mean = col.mean();
        for (p, a) in pred.column(j).iter().zip(col.iter()) {
            ss_res += (a - p).powi(2);
            ss_tot += (a - mean).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn fitness(r2: f64, length: usize, gamma: f64) -> f64 {
    r2 - gamma * length as f64
}

pub fn predict_trajectory(eq: &Equation, z0: &[f64], dt: f64, n: usize) -> Result<Trajectory> {
    if z0.len() != eq.dim() {
        return Err(Error::InvalidArgument("initial state dimension mismatch".into()));
    }
    if !(dt > 0.0) || n < 2 {
        return Err(Error::InvalidArgument("need dt > 0 and n >= 2".into()));
    }
    let states = rk4(|z, out| eq.rhs(z, out), z0, dt, n)?;
    Trajectory::new(0.0, dt, states)
}

/// Eigenvalues of the system matrix `A` with `A[i][j]` the coefficient of
/// `z_j` in `dz_i/dt`, sorted by real then imaginary part.
pub fn linear_eigenvalues(eq: &Equation) -> Result<Vec<Complex<f64>>> {
    let d = eq.dim();
    if d > 4 {
        return Err(Error::InvalidArgument(format!("dimension {d} exceeds 4")));
    }
    let mut a = DMatrix::zeros(d, d);
    for (i, t) in eq.library.terms().iter().enumerate() {
        let var = match t.factors() {
            [Factor::Poly { var, power: 1 }] => *var,
            _ => {
                if (0..d).all(|j| eq.coeffs.values[(i, j)] == 0.0) {
                    continue;
                }
                return Err(Error::InvalidArgument(format!("term `{t}` is not linear")));
            }
        };
        for row in 0..d {
            a[(row, var)] = eq.coeffs.values[(i, row)];
        }
    }
    let mut eig: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_cases() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let p = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 4.0]);
        assert!((r_squared(&p, &a).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        let means = DMatrix::from_element(3, 1, 2.0);
        assert_eq!(r_squared(&means, &a).unwrap(), 0.0);
        assert!(matches!(r_squared(&means, &means), Err(Error::DegenerateTarget)));
        let scaled = r_squared(&(p.map(|v| 3.0 * v - 1.0)), &a.map(|v| 3.0 * v - 1.0)).unwrap();
        assert!((scaled - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fitness_cases() {
        assert_eq!(fitness(1.0, 0, 0.02), 1.0);
        assert!((fitness(0.95, 5, 0.02) - 0.85).abs() < 1e-12);
        assert_eq!(fitness(0.7, 9, 0.0), 0.7);
    }

    #[test]
    fn eigenvalues() {
        let rot = Equation::from_terms(&[("z1", vec![0.0, 1.0]), ("z2", vec![-1.0, 0.0])], 2).unwrap();
        let e = linear_eigenvalues(&rot).unwrap();
        assert!(e[0].re.abs() < 1e-12 && (e[0].im + 1.0).abs() < 1e-12);
        assert!((e[1].im - 1.0).abs() < 1e-12);

        // characteristic polynomial of [[a, b], [c, d]]: l^2 - (a+d) l + (ad - bc)
        let (a, b, c, d) = (-0.1, 2.0, -2.0, -0.1);
        let lin = Equation::from_terms(&[("z1", vec![a, c]), ("z2", vec![b, d])], 2).unwrap();
        let e = linear_eigenvalues(&lin).unwrap();
        let tr: f64 = a + d;
        let det = a * d - b * c;
        let disc = (4.0 * det - tr * tr).sqrt() / 2.0;
        assert!((e[0].re - tr / 2.0).abs() < 1e-12 && (e[0].im + disc).abs() < 1e-12);
        assert!((e[1].im - disc).abs() < 1e-12);

        let diag = Equation::from_terms(&[("z1", vec![-0.5, 0.0]), ("z2", vec![0.0, -0.5])], 2).unwrap();
        let e = linear_eigenvalues(&diag).unwrap();
        assert!(e.iter().all(|v| (v.re + 0.5).abs() < 1e-12 && v.im == 0.0));

        let nl = Equation::from_terms(&[("z1^2", vec![1.0, 0.0]), ("z2", vec![0.0, 1.0])], 2).unwrap();
        assert!(linear_eigenvalues(&nl).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut eq = Equation::from_terms(&[("z1", vec![-0.1, -2.0]), ("sin(z2)", vec![2.0, 0.0])], 2).unwrap();
        eq.metrics = Some(Metrics {
            r2: 0.99,
            length: 3,
            fitness: 0.93,
        });
        let text = eq.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["terms"][1], "sin(z2)");
        assert_eq!(v["coeffs"][0][1], -2.0);
        assert_eq!(Equation::from_json(&text).unwrap(), eq);
    }

    #[test]
    fn zero_coefficients_constant_prediction() {
        let eq = Equation::from_terms(&[("z1", vec![0.0, 0.0])], 2).unwrap();
        let t = predict_trajectory(&eq, &[0.3, -1.0], 0.1, 50).unwrap();
        assert!(t.states.row_iter().all(|r| r[0] == 0.3 && r[1] == -1.0));
        assert_eq!(eq.length(), 0);
        assert_eq!(eq.to_string(), "dz1/dt = 0\ndz2/dt = 0");
    }

    #[test]
    fn circle_prediction() {
        let eq = Equation::from_terms(&[("z1", vec![0.0, 1.0]), ("z2", vec![-1.0, 0.0])], 2).unwrap();
        let t = predict_trajectory(&eq, &[1.0, 0.0], 0.01, 1001).unwrap();
        for i in (0..1001).step_by(50) {
            let s = i as f64 * 0.01;
            assert!((t.states[(i, 0)] - s.cos()).abs() < 1e-3);
            assert!((t.states[(i, 1)] - s.sin()).abs() < 1e-3);
        }
    }
}
