use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

/// Encoder widths `input -> hidden... -> latent`; the decoder mirrors them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![128, 64],
            latent_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = self.encoder_widths();
        w.reverse();
        w
    }
}

/// Encoder/decoder pair working on standardized inputs: each pixel has
/// its mean removed and everything is divided by one global scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub arch: Architecture,
    pub seed: u64,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Autoencoder {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.latent_dim == 0 || arch.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::new(&arch.encoder_widths(), arch.activation, &mut rng);
        let decoder = Mlp::new(&arch.decoder_widths(), arch.activation, &mut rng);
        Ok(Self {
            mean: vec![0.0; arch.input_dim],
            scale: 1.0,
            arch,
            seed,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn fit_standardization(&mut self, x: &DMatrix<f64>) {
        let n = x.nrows().max(1) as f64;
        self.mean = x.column_iter().map(|c| c.sum() / n).collect();
        let var = x
            .column_iter()
            .zip(&self.mean)
            .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (n * x.ncols().max(1) as f64);
        self.scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }

    pub fn standardize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = x.clone();
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        s / self.scale
    }

    pub fn destandardize(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = s * self.scale;
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        x
    }

    pub fn encode(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.encoder.forward(&self.standardize(x))
    }

    pub fn decode(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.destandardize(&self.decoder.forward(z))
    }

    pub fn reconstruct(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.decode(&self.encode(x))
    }

    /// Latents and their time derivatives `J_phi(x) xdot`.
    pub fn encode_with_rate(&self, x: &DMatrix<f64>, xdot: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let t = self.encoder.trace(&self.standardize(x), Some(&(xdot / self.scale)));
        (t.output().clone(), t.tangent().clone())
    }

    /// Mean squared reconstruction error per pixel, in input units.
    pub fn recon_error(&self, x: &DMatrix<f64>) -> f64 {
        if x.nrows() == 0 {
            return 0.0;
        }
        (self.reconstruct(x) - x).norm_squared() / x.len() as f64
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn params_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.encoder
            .params()
            .into_iter()
            .chain(self.decoder.params())
            .map(|m| m.shape())
            .collect()
    }

    /// Writes a one-line JSON header followed by little-endian f32 values:
    /// pixel means, scale, then every parameter matrix in column-major order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            arch: self.arch.clone(),
            d: self.arch.latent_dim,
            seed: self.seed,
            values: self.mean.len() + 1 + self.param_count(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        let mut blob = Vec::with_capacity(header.values * 4);
        let mut push = |v: f64| blob.extend_from_slice(&(v as f32).to_le_bytes());
        self.mean.iter().for_each(|&v| push(v));
        push(self.scale);
        for m in self.encoder.params().into_iter().chain(self.decoder.params()) {
            m.iter().for_each(|&v| push(v));
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
        let blob = &bytes[split + 1..];
        let mut model = Autoencoder::new(header.arch, header.seed)?;
        let expected = model.mean.len() + 1 + model.param_count();
        if header.values != expected || blob.len() != expected * 4 {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds {} bytes, architecture needs {}",
                blob.len(),
                expected * 4
            )));
        }
        let mut vals = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        for m in model.mean.iter_mut() {
            *m = vals.next().expect("length checked");
        }
        model.scale = vals.next().expect("length checked");
        for p in model.params_mut() {
            for v in p.iter_mut() {
                *v = vals.next().expect("length checked");
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    arch: Architecture,
    d: usize,
    seed: u64,
    values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Fraction of trailing frames held out for the reported error.
    pub holdout: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            hidden: vec![128, 64],
            activation: Activation::Tanh,
            holdout: 0.1,
        }
    }
}

impl TrainHyper {
    pub fn architecture(&self, input_dim: usize, d: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: d,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean standardized training loss per epoch, measured before each update.
    pub losses: Vec<f64>,
    /// Held-out mean squared error per pixel, input units.
    pub recon_error: f64,
    /// Loss did not decrease over the first 50 epochs.
    pub stalled: bool,
}

/// Rows of `x` are flattened frames. The last `holdout` fraction is
/// excluded from training and scored at the end.
pub fn train_autoencoder(x: &DMatrix<f64>, d: usize, hyper: &TrainHyper) -> Result<(Autoencoder, TrainReport)> {
    let n = x.nrows();
    if n < 2 || d == 0 || hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(Error::InvalidArgument(
            "training needs at least 2 frames, d >= 1, a positive batch size and learning rate".into(),
        ));
    }
    let n_hold = ((n as f64 * hyper.holdout).round() as usize).min(n - 1);
    let n_train = n - n_hold;
    let train = x.rows(0, n_train).into_owned();
    let mut model = Autoencoder::new(hyper.architecture(x.ncols(), d), hyper.seed)?;
    model.fit_standardization(&train);
    let xs = model.standardize(&train);
    let mut opt = Adam::new(hyper.lr, &model.param_shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch = xs.select_rows(chunk);
            total += recon_step(&mut model, &mut opt, &batch) * chunk.len() as f64;
        }
        let loss = total / n_train as f64;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { epoch });
        }
        losses.push(loss);
    }
    let probe = losses.len().min(50);
    let stalled = probe >= 2 && losses[probe - 1] >= losses[0];
    if stalled {
        log::warn!("training stalled: loss did not decrease over the first {probe} epochs");
    }
    let held = if n_hold > 0 { x.rows(n_train, n_hold).into_owned() } else { train };
    let recon_error = model.recon_error(&held);
    Ok((
        model,
        TrainReport {
            losses,
            recon_error,
            stalled,
        },
    ))
}

/// One optimizer step on a standardized batch; returns the pre-step loss
/// `(1/b) sum ||x - psi(phi(x))||^2`.
fn recon_step(model: &mut Autoencoder, opt: &mut Adam, batch: &DMatrix<f64>) -> f64 {
    let b = batch.nrows() as f64;
    let enc = model.encoder.trace(batch, None);
    let dec = model.decoder.trace(enc.output(), None);
    let resid = dec.output() - batch;
    let loss = resid.norm_squared() / b;
    let mut enc_grads = model.encoder.zero_grads();
    let mut dec_grads = model.decoder.zero_grads();
    let g_z = model
        .decoder
        .backward(enc.output(), None, &dec, resid * (2.0 / b), None, &mut dec_grads, true)
        .expect("input gradient requested");
    model.encoder.backward(batch, None, &enc, g_z, None, &mut enc_grads, false);
    enc_grads.extend(dec_grads);
    opt.step(model.params_mut(), &enc_grads);
    loss
}

/// Eigenvalue shares of the latent covariance, largest first.
pub fn variance_explained(latents: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, d) = latents.shape();
    if n <= d {
        return Err(Error::InvalidArgument(format!("need more than {d} samples, got {n}")));
    }
    let mean = latents.row_mean();
    let mut centered = latents.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Ok(vec![0.0; d]);
    }
    Ok(eig.into_iter().map(|v| v / total).collect())
}
