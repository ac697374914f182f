use nalgebra::DMatrix;

/// Adaptive-moment optimizer over a fixed list of parameter matrices.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut DMatrix<f64>>, grads: &[DMatrix<f64>]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = DMatrix::from_row_slice(1, 2, &[3.0, -2.0]);
        let mut opt = Adam::new(0.05, &[(1, 2)]);
        for _ in 0..2000 {
            let g = x.map(|v| 2.0 * (v - 1.0));
            opt.step(vec![&mut x], &[g]);
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        opt.step(vec![&mut x], &[DMatrix::from_row_slice(1, 1, &[123.0])]);
        assert!((x[0] + 0.1).abs() < 1e-6);
    }
}
