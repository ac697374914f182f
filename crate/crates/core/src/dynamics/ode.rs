use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::systems::{SystemKind, SystemSpec};
use crate::error::{Error, Result};

/// States whose norm grows past this are treated as blown up.
pub const OVERFLOW_GUARD: f64 = 1e6;

/// Uniformly sampled state sequence; row `i` is the state at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if states.nrows() < 2 {
            return Err(Error::InvalidArgument("trajectory needs at least 2 states".into()));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory contains non-finite values".into()));
        }
        Ok(Self { t0, dt, states })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.t0 + i as f64 * self.dt).collect()
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        self.states.row(i).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.column(j).iter().copied().collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for j in 0..self.dim() {
            header.push_str(&format!(",z{}", j + 1));
        }
        writeln!(w, "{header}")?;
        for (i, t) in self.times().into_iter().enumerate() {
            let mut line = format!("{t}");
            for j in 0..self.dim() {
                line.push_str(&format!(",{}", self.states[(i, j)]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::InvalidArgument(format!("bad trajectory header `{header}`")));
        }
        let d = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad trajectory row `{line}`: {e}")))?;
            if fields.len() != d + 1 {
                return Err(Error::InvalidArgument(format!("row has wrong width: `{line}`")));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs at least 2 rows".into()));
        }
        let dt = times[1] - times[0];
        let n = times.len();
        Trajectory::new(times[0], dt, DMatrix::from_row_slice(n, d, &values))
    }
}

/// Fixed-step classical Runge-Kutta integration of `dz/dt = f(z)`.
///
/// Returns `n` states including `z0`.
pub fn rk4<F>(mut f: F, z0: &[f64], dt: f64, n: usize) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = z0.len();
    let mut states = DMatrix::zeros(n, d);
    let mut z = z0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for step in 0..n {
        for j in 0..d {
            states[(step, j)] = z[j];
        }
        if step + 1 == n {
            break;
        }
        f(&z, &mut k1);
        for j in 0..d {
            tmp[j] = z[j] + 0.5 * dt * k1[j];
        }
        f(&tmp, &mut k2);
        for j in 0..d {
            tmp[j] = z[j] + 0.5 * dt * k2[j];
        }
        f(&tmp, &mut k3);
        for j in 0..d {
            tmp[j] = z[j] + dt * k3[j];
        }
        f(&tmp, &mut k4);
        for j in 0..d {
            z[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > OVERFLOW_GUARD {
            return Err(Error::Diverged { step: step + 1 });
        }
    }
    Ok(states)
}

pub fn integrate_ode(spec: &SystemSpec, z0: &[f64], dt: f64, n: usize) -> Result<Trajectory> {
    if spec.kind != SystemKind::Ode {
        return Err(Error::InvalidArgument(format!("{} is not an ODE system", spec.name)));
    }
    if z0.len() != spec.dim {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} entries, system has {}",
            z0.len(),
            spec.dim
        )));
    }
    if !(dt > 0.0) || n < 2 {
        return Err(Error::InvalidArgument("need dt > 0 and n >= 2".into()));
    }
    let states = rk4(|z, out| spec.rhs(z, out), z0, dt, n)?;
    Trajectory::new(0.0, dt, states)
}
