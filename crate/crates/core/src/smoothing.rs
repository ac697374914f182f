//! Savitzky-Golay smoothing and differentiation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window length `h` (odd, at least 3) and polynomial order `p < h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterParams {
    pub h: usize,
    pub p: usize,
}

impl FilterParams {
    pub fn new(h: usize, p: usize) -> Result<Self> {
        let params = Self { h, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h < 3 || self.h % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "window length must be odd and at least 3, got {}",
                self.h
            )));
        }
        if self.p >= self.h {
            return Err(Error::InvalidArgument(format!(
                "order {} must be below window length {}",
                self.p, self.h
            )));
        }
        Ok(())
    }
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { h: 11, p: 3 }
    }
}

/// Weights that map the `h` window samples to the fitted polynomial's
/// `deriv`-th derivative (in units of samples) at window position `pos`.
fn window_weights(params: FilterParams, pos: usize, deriv: usize) -> Vec<f64> {
    let h = params.h;
    let half = (h / 2) as f64;
    let cols = params.p + 1;
    let basis = DMatrix::from_fn(h, cols, |i, k| ((i as f64 - half) / half).powi(k as i32));
    let gram = basis.transpose() * &basis;
    let u = (pos as f64 - half) / half;
    // derivative of u^k with respect to sample position
    let mut probe = DVector::zeros(cols);
    for k in deriv..cols {
        let falling: f64 = (0..deriv).map(|j| (k - j) as f64).product();
        probe[k] = falling * u.powi((k - deriv) as i32) / half.powi(deriv as i32);
    }
    let solved = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&probe))
        .unwrap_or_else(|| gram.clone().pseudo_inverse(1e-14).expect("svd") * &probe);
    (basis * solved).iter().copied().collect()
}

fn apply(signal: &[f64], params: FilterParams, deriv: usize) -> Result<Vec<f64>> {
    params.validate()?;
    let n = signal.len();
    if n < params.h {
        return Err(Error::InvalidArgument(format!(
            "signal of length {n} is shorter than window {}",
            params.h
        )));
    }
    let h = params.h;
    let m = h / 2;
    let center = window_weights(params, m, deriv);
    let dot = |w: &[f64], start: usize| -> f64 { w.iter().zip(&signal[start..start + h]).map(|(a, b)| a * b).sum() };
    let mut out = vec![0.0; n];
    for i in m..n - m {
        out[i] = dot(&center, i - m);
    }
    for i in 0..m {
        out[i] = dot(&window_weights(params, i, deriv), 0);
        let j = n - m + i;
        out[j] = dot(&window_weights(params, h - m + i, deriv), n - h);
    }
    Ok(out)
}

/// Least-squares polynomial smoothing; the first and last `h/2` samples
/// are evaluated from the terminal windows' fits.
pub fn sg_filter(signal: &[f64], params: FilterParams) -> Result<Vec<f64>> {
    apply(signal, params, 0)
}

/// First derivative of the windowed fits, per unit time.
pub fn sg_derivative(signal: &[f64], params: FilterParams, dt: f64) -> Result<Vec<f64>> {
    Ok(apply(signal, params, 1)?.into_iter().map(|v| v / dt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rejects_bad_params() {
        assert!(FilterParams::new(10, 3).is_err());
        assert!(FilterParams::new(5, 5).is_err());
        assert!(FilterParams::new(1, 0).is_err());
        assert!(sg_filter(&[1.0; 5], FilterParams { h: 7, p: 2 }).is_err());
    }

    #[test]
    fn constant_unchanged() {
        let x = vec![4.25; 40];
        for (h, p) in [(3, 0), (11, 3), (21, 6)] {
            let y = sg_filter(&x, FilterParams { h, p }).unwrap();
            assert!(y.iter().all(|v| (v - 4.25).abs() < 1e-12));
        }
    }

    #[test]
    fn quadratic_is_fixed_point() {
        let x: Vec<f64> = (0..50).map(|i| 0.3 * (i * i) as f64 - 2.0 * i as f64 + 1.0).collect();
        let y = sg_filter(&x, FilterParams { h: 7, p: 2 }).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    /// Independent oracle: fit each window by explicit normal equations on
    /// unscaled positions.
    fn oracle_center(window: &[f64], p: usize) -> f64 {
        let h = window.len();
        let c = (h / 2) as f64;
        let a = DMatrix::from_fn(h, p + 1, |i, k| (i as f64 - c).powi(k as i32));
        let y = DVector::from_column_slice(window);
        let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * y)).unwrap();
        coef[0]
    }

    #[test]
    fn matches_window_oracle_and_denoises() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let clean: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin()).collect();
        let noisy: Vec<f64> = clean
            .iter()
            .map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let params = FilterParams { h: 11, p: 3 };
        let y = sg_filter(&noisy, params).unwrap();
        for i in 5..n - 5 {
            assert!((y[i] - oracle_center(&noisy[i - 5..=i + 5], 3)).abs() < 1e-10);
        }
        let rmse = |a: &[f64]| (a.iter().zip(&clean).map(|(x, c)| (x - c).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rmse(&y) < rmse(&noisy));
    }

    #[test]
    fn derivative_of_cubic_is_exact() {
        let dt = 0.1;
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * dt).powi(3)).collect();
        let d = sg_derivative(&x, FilterParams { h: 9, p: 3 }, dt).unwrap();
        for (i, v) in d.iter().enumerate() {
            let t = i as f64 * dt;
            assert!((v - 3.0 * t * t).abs() < 1e-9, "{i}: {v}");
        }
    }

    #[test]
    fn linear_in_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = FilterParams { h: 11, p: 3 };
        let combo: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let (fx, fz, fc) = (sg_filter(&x, p).unwrap(), sg_filter(&z, p).unwrap(), sg_filter(&combo, p).unwrap());
        for i in 0..60 {
            assert!((fc[i] - (2.5 * fx[i] - 0.75 * fz[i])).abs() < 1e-10);
        }
    }
}
