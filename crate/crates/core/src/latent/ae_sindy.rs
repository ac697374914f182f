use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::reason::{Assessment, Assessor, FitSeries};
use crate::sindy::{
    column_scales, fit_coefficients, fitness, r_squared, CoefficientMatrix, Equation, FitOptions, Metrics,
};
use crate::termlib::{evaluate_library, TermLibrary};

/// Relative weights of reconstruction, derivative-fit and L1 terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub sindy: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            sindy: 1.0,
            l1: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeSindyHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Normalized coefficient magnitude below which entries are zeroed and frozen.
    pub threshold: f64,
    pub threshold_every: usize,
    pub weights: LossWeights,
}

impl Default for AeSindyHyper {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            threshold: 0.05,
            threshold_every: 100,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub recon: f64,
    pub sindy: f64,
    pub l1: f64,
}

impl LossTerms {
    pub fn total(&self, w: LossWeights) -> f64 {
        w.recon * self.recon + w.sindy * self.sindy + w.l1 * self.l1
    }
}

/// Loss pieces and gradients for one batch.
pub struct LossGrad {
    pub terms: LossTerms,
    /// Encoder then decoder parameters, as [`Autoencoder::params_mut`].
    pub net: Vec<DMatrix<f64>>,
    pub xi: DMatrix<f64>,
}

/// Joint objective on standardized inputs:
/// `(1/b) sum ||x - psi(phi(x))||^2 + (1/b) sum ||J_phi xdot - Theta(phi(x)) Xi||^2 + eta sum |Xi|`,
/// with entries where `mask` is zero held out of the L1 term.
pub fn ae_sindy_loss(
    model: &Autoencoder,
    x: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    library: &TermLibrary,
    xi: &DMatrix<f64>,
    mask: &DMatrix<f64>,
    eta: f64,
    weights: LossWeights,
) -> Result<LossGrad> {
    let b = x.nrows() as f64;
    let enc = model.encoder.trace(x, Some(xdot));
    let z = enc.output();
    let zdot = enc.tangent();
    let dec = model.decoder.trace(z, None);

    let resid_x = dec.output() - x;
    let theta = evaluate_library(library, z)?;
    let resid_z = zdot - &theta * xi;
    let terms = LossTerms {
        recon: resid_x.norm_squared() / b,
        sindy: resid_z.norm_squared() / b,
        l1: eta * xi.component_mul(mask).abs().sum(),
    };

    let mut dec_grads = model.decoder.zero_grads();
    let mut g_z = model
        .decoder
        .backward(z, None, &dec, resid_x * (2.0 * weights.recon / b), None, &mut dec_grads, true)
        .expect("input gradient requested");
    let g_t = resid_z * (2.0 * weights.sindy / b);
    let mut g_xi = -(theta.transpose() * &g_t);
    g_xi += xi.map(f64::signum).component_mul(mask) * (weights.l1 * eta);
    // chain through Theta(z): d/dz_m of -<g_t, Theta Xi>
    let q = &g_t * xi.transpose();
    let mut zi = vec![0.0; z.ncols()];
    for i in 0..z.nrows() {
        for (m, v) in zi.iter_mut().enumerate() {
            *v = z[(i, m)];
        }
        for (k, term) in library.terms().iter().enumerate() {
            if q[(i, k)] == 0.0 {
                continue;
            }
            for m in 0..z.ncols() {
                g_z[(i, m)] -= term.partial(&zi, m) * q[(i, k)];
            }
        }
    }
    let mut net = model.encoder.zero_grads();
    model.encoder.backward(x, Some(xdot), &enc, g_z, Some(g_t), &mut net, false);
    net.extend(dec_grads);
    Ok(LossGrad { terms, net, xi: g_xi })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeSindyFit {
    pub coeffs: CoefficientMatrix,
    /// Epoch means of the three loss pieces.
    pub losses: Vec<LossTerms>,
}

fn threshold_xi(xi: &mut DMatrix<f64>, mask: &mut DMatrix<f64>, scales: &[f64], threshold: f64) {
    for k in 0..xi.nrows() {
        for j in 0..xi.ncols() {
            if (xi[(k, j)] * scales[k]).abs() < threshold {
                xi[(k, j)] = 0.0;
                mask[(k, j)] = 0.0;
            }
        }
    }
}

/// Latents and latent rates for the whole data set, plus the library
/// design on those latents.
fn latent_design(
    model: &Autoencoder,
    x: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    library: &TermLibrary,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (z, zdot) = model.encode_with_rate(x, xdot);
    let theta = evaluate_library(library, &z)?;
    Ok((z, zdot, theta))
}

/// Fine-tunes `model` jointly with sparse coefficients. `x` and `xdot`
/// are raw frames and frame derivatives (rows are samples); the model's
/// standardization is reused. Coefficients start from sparse regression
/// on the initial latents and are hard-thresholded every
/// `threshold_every` epochs and after the last one. On a non-finite loss
/// the model is restored to the last completed epoch and
/// `DivergedTraining` is returned.
pub fn train_ae_sindy(
    model: &mut Autoencoder,
    x: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    library: &TermLibrary,
    eta: f64,
    hyper: &AeSindyHyper,
) -> Result<AeSindyFit> {
    if x.shape() != xdot.shape() || x.ncols() != model.arch.input_dim {
        return Err(Error::InvalidArgument("frames and derivatives must match the model input".into()));
    }
    if library.dim() != model.latent_dim() {
        return Err(Error::InvalidArgument(format!(
            "library is over {} variables, latent dimension is {}",
            library.dim(),
            model.latent_dim()
        )));
    }
    let xs = model.standardize(x);
    let xds = xdot / model.scale;
    let (_, zdot, theta) = latent_design(model, x, xdot, library)?;
    let mut xi = fit_coefficients(&theta, &zdot, eta, hyper.threshold)?.values;
    let mut mask = DMatrix::from_element(xi.nrows(), xi.ncols(), 1.0);

    let mut opt = Adam::new(hyper.lr, &model.param_shapes());
    let mut xi_opt = Adam::new(hyper.lr, &[xi.shape()]);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0xae51);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let stable = (model.clone(), xi.clone());
        order.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let (bx, bxd) = (xs.select_rows(chunk), xds.select_rows(chunk));
            let lg = ae_sindy_loss(model, &bx, &bxd, library, &xi, &mask, eta, hyper.weights)?;
            if !lg.terms.total(hyper.weights).is_finite() {
                (*model, _) = stable;
                return Err(Error::DivergedTraining { epoch });
            }
            let w = chunk.len() as f64 / n as f64;
            sum.recon += lg.terms.recon * w;
            sum.sindy += lg.terms.sindy * w;
            sum.l1 += lg.terms.l1 * w;
            opt.step(model.params_mut(), &lg.net);
            let g_xi = lg.xi.component_mul(&mask);
            xi_opt.step(vec![&mut xi], &[g_xi]);
            xi.component_mul_assign(&mask);
        }
        losses.push(sum);
        let last = epoch + 1 == hyper.epochs;
        if last || (hyper.threshold_every > 0 && (epoch + 1) % hyper.threshold_every == 0) {
            let (_, _, theta) = latent_design(model, x, xdot, library)?;
            threshold_xi(&mut xi, &mut mask, &column_scales(&theta), hyper.threshold);
        }
    }
    if hyper.epochs == 0 {
        threshold_xi(&mut xi, &mut mask, &column_scales(&theta), hyper.threshold);
    }
    let (_, _, theta) = latent_design(model, x, xdot, library)?;
    Ok(AeSindyFit {
        coeffs: CoefficientMatrix {
            values: xi,
            scales: column_scales(&theta),
            library_ref: library.signature(),
        },
        losses,
    })
}

/// Central differences along the frame axis, one-sided at the ends.
pub fn frame_derivatives(x: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    if x.nrows() < 3 || !(dt > 0.0) {
        return Err(Error::InvalidArgument("need at least 3 frames and dt > 0".into()));
    }
    Ok(crate::sindy::central_rows(x, dt))
}

/// Scores a library by fine-tuning a copy of a pretrained autoencoder.
pub struct LatentAssessor {
    base: Autoencoder,
    x: DMatrix<f64>,
    xdot: DMatrix<f64>,
    pub hyper: AeSindyHyper,
    models: Vec<Autoencoder>,
}

impl LatentAssessor {
    pub fn new(base: Autoencoder, x: DMatrix<f64>, xdot: DMatrix<f64>, hyper: AeSindyHyper) -> Result<Self> {
        if x.shape() != xdot.shape() || x.ncols() != base.arch.input_dim {
            return Err(Error::InvalidArgument("frames and derivatives must match the model input".into()));
        }
        Ok(Self {
            base,
            x,
            xdot,
            hyper,
            models: Vec::new(),
        })
    }

    /// Fine-tuned models, one per successful assessment, in pool order.
    pub fn models(&self) -> &[Autoencoder] {
        &self.models
    }

    pub fn base(&self) -> &Autoencoder {
        &self.base
    }
}

impl Assessor for LatentAssessor {
    fn dim(&self) -> usize {
        self.base.latent_dim()
    }

    fn assess(&mut self, library: &TermLibrary, opts: FitOptions) -> Result<Assessment> {
        let mut model = self.base.clone();
        let hyper = AeSindyHyper {
            threshold: opts.threshold,
            ..self.hyper.clone()
        };
        let fit = train_ae_sindy(&mut model, &self.x, &self.xdot, library, opts.eta, &hyper)?;
        let (_, zdot, theta) = latent_design(&model, &self.x, &self.xdot, library)?;
        let predicted = &theta * &fit.coeffs.values;
        let r2 = r_squared(&predicted, &zdot)?;
        let mut equation = Equation::new(library.clone(), fit.coeffs, opts.eta)?;
        let length = equation.length();
        equation.metrics = Some(Metrics {
            r2,
            length,
            fitness: fitness(r2, length, opts.gamma),
        });
        self.models.push(model);
        Ok(Assessment {
            equation,
            fit: Some(FitSeries {
                predicted,
                actual: zdot,
            }),
        })
    }
}
