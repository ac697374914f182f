//! Fully connected networks with hand-written reverse mode and a
//! forward-mode tangent pass for Jacobian-vector products.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// First derivative, written in terms of the output `a = f(x)`.
    fn d1(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    /// Second derivative in terms of the output.
    fn d2(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a) * (1.0 - 2.0 * a),
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
            Activation::Linear => 0.0,
        }
    }
}

/// `y = x w + b` on row-major batches; `w` is `in x out`, `b` is `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dense {
    /// Uniform Glorot initialization, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit)),
            b: DMatrix::zeros(1, fan_out),
        }
    }

    fn affine(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.w;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[(0, j)]);
        }
        z
    }
}

/// Activation after every layer except the last, which is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Per-layer outputs kept for the backward pass.
pub struct Trace {
    pub acts: Vec<DMatrix<f64>>,
    pub tangents: Vec<DMatrix<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("non-empty network")
    }

    pub fn tangent(&self) -> &DMatrix<f64> {
        self.tangents.last().expect("tangent pass")
    }
}

impl Mlp {
    pub fn new(widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "network needs input and output widths");
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Self { layers, activation }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn act(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Linear
        } else {
            self.activation
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let f = self.act(l);
            a = layer.affine(&a);
            if f != Activation::Linear {
                a.apply(|v| *v = f.apply(*v));
            }
        }
        a
    }

    /// Forward pass keeping every layer output; with `xdot`, also pushes
    /// the tangent `J(x) xdot` through each layer.
    pub fn trace(&self, x: &DMatrix<f64>, xdot: Option<&DMatrix<f64>>) -> Trace {
        let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        let mut tangents = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let f = self.act(l);
            let input = if l == 0 { x } else { &acts[l - 1] };
            let mut a = layer.affine(input);
            if f != Activation::Linear {
                a.apply(|v| *v = f.apply(*v));
            }
            if let Some(xd) = xdot {
                let tin = if l == 0 { xd } else { &tangents[l - 1] };
                let mut t = tin * &layer.w;
                if f != Activation::Linear {
                    t.zip_apply(&a, |tv, av| *tv *= f.d1(av));
                }
                tangents.push(t);
            }
            acts.push(a);
        }
        Trace { acts, tangents }
    }

    pub fn zero_grads(&self) -> Vec<DMatrix<f64>> {
        self.layers
            .iter()
            .flat_map(|l| [DMatrix::zeros(l.w.nrows(), l.w.ncols()), DMatrix::zeros(1, l.b.ncols())])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn params(&self) -> Vec<&DMatrix<f64>> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    /// Accumulates parameter gradients into `grads` (ordered as
    /// [`Mlp::params_mut`]) given the gradient of a scalar loss with respect
    /// to the output and, when the trace carries tangents, with respect to
    /// the output tangent. Returns the gradient with respect to the input
    /// when `want_input` is set.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        xdot: Option<&DMatrix<f64>>,
        trace: &Trace,
        grad_out: DMatrix<f64>,
        grad_tangent: Option<DMatrix<f64>>,
        grads: &mut [DMatrix<f64>],
        want_input: bool,
    ) -> Option<DMatrix<f64>> {
        let mut g_a = grad_out;
        let mut g_t = grad_tangent;
        for l in (0..self.layers.len()).rev() {
            let f = self.act(l);
            let a = &trace.acts[l];
            // gradients with respect to the pre-activation and the
            // pre-activation tangent
            let (g_z, g_u) = if f == Activation::Linear {
                (g_a, g_t)
            } else {
                let mut g_z = g_a;
                g_z.zip_apply(a, |g, av| *g *= f.d1(av));
                let g_u = g_t.map(|gt| {
                    let u = if l == 0 {
                        xdot.expect("tangent input") * &self.layers[l].w
                    } else {
                        &trace.tangents[l - 1] * &self.layers[l].w
                    };
                    let mut cross = gt.clone();
                    cross.zip_zip_apply(a, &u, |c, av, uv| *c *= f.d2(av) * uv);
                    g_z += cross;
                    let mut g_u = gt;
                    g_u.zip_apply(a, |g, av| *g *= f.d1(av));
                    g_u
                });
                (g_z, g_u)
            };
            let input = if l == 0 { x } else { &trace.acts[l - 1] };
            grads[2 * l] += input.transpose() * &g_z;
            for (j, col) in g_z.column_iter().enumerate() {
                grads[2 * l + 1][(0, j)] += col.sum();
            }
            if let Some(gu) = &g_u {
                let tin = if l == 0 { xdot.expect("tangent input") } else { &trace.tangents[l - 1] };
                grads[2 * l] += tin.transpose() * gu;
            }
            if l == 0 && !want_input {
                return None;
            }
            let w = &self.layers[l].w;
            g_a = &g_z * w.transpose();
            g_t = g_u.map(|gu| &gu * w.transpose());
        }
        Some(g_a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(act: Activation) -> (Mlp, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (Mlp::new(&[6, 5, 4, 3], act, &mut rng), rng)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn jvp_matches_finite_difference() {
        for act in [Activation::Sigmoid, Activation::Tanh] {
            let (mlp, mut rng) = net(act);
            for _ in 0..100 {
                let x = random(1, 6, &mut rng);
                let v = random(1, 6, &mut rng);
                let t = mlp.trace(&x, Some(&v));
                let h = 1e-5;
                let fd = (mlp.forward(&(&x + &v * h)) - mlp.forward(&(&x - &v * h))) / (2.0 * h);
                let rel = (t.tangent() - &fd).norm() / fd.norm().max(1e-12);
                assert!(rel < 1e-4, "{rel}");
            }
        }
    }

    /// Scalar test loss: <c1, y> + <c2, ydot>, whose gradient must match
    /// central differences for every parameter.
    #[test]
    fn backward_matches_finite_difference() {
        for act in [Activation::Sigmoid, Activation::Tanh] {
            let (mut mlp, mut rng) = net(act);
            let x = random(4, 6, &mut rng);
            let xd = random(4, 6, &mut rng);
            let c1 = random(4, 3, &mut rng);
            let c2 = random(4, 3, &mut rng);
            let loss = |m: &Mlp, x: &DMatrix<f64>| {
                let t = m.trace(x, Some(&xd));
                t.output().dot(&c1) + t.tangent().dot(&c2)
            };
            let t = mlp.trace(&x, Some(&xd));
            let mut grads = mlp.zero_grads();
            let gx = mlp
                .backward(&x, Some(&xd), &t, c1.clone(), Some(c2.clone()), &mut grads, true)
                .unwrap();
            let h = 1e-6;
            for p in 0..grads.len() {
                for k in 0..grads[p].len() {
                    let orig = mlp.params()[p][k];
                    mlp.params_mut().remove(p)[k] = orig + h;
                    let up = loss(&mlp, &x);
                    mlp.params_mut().remove(p)[k] = orig - h;
                    let down = loss(&mlp, &x);
                    mlp.params_mut().remove(p)[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    assert!((fd - grads[p][k]).abs() < 1e-6 * (1.0 + fd.abs()), "{p}/{k}: {fd} vs {}", grads[p][k]);
                }
            }
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
                assert!((fd - gx[k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
