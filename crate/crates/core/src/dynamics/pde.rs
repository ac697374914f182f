use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frames::{FrameMeta, FrameSequence};
use super::systems::{SystemKind, SystemName, SystemSpec};
use crate::error::{Error, Result};

/// Square periodic grid of `size x size` cells covering a domain of side
/// `length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub size: usize,
    pub length: f64,
}

impl PdeGrid {
    pub fn dx(&self) -> f64 {
        self.length / self.size as f64
    }

    /// Cell-center coordinates centred on the origin.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx() - 0.5 * self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeRun {
    pub grid: PdeGrid,
    pub dt: f64,
    pub frames: usize,
    pub steps_per_frame: usize,
}

impl PdeRun {
    pub fn frame_dt(&self) -> f64 {
        self.dt * self.steps_per_frame as f64
    }
}

/// Multichannel field, one `size * size` row-major plane per channel.
pub type Field = Vec<Vec<f64>>;

pub fn default_pde_run(name: SystemName) -> Result<PdeRun> {
    let (size, length) = match name {
        SystemName::Lo => (100, 20.0),
        SystemName::Bruss => (64, 32.0),
        SystemName::Water => (128, 10.0),
        other => {
            return Err(Error::InvalidArgument(format!("{other} is not a PDE system")));
        }
    };
    let dt = match name {
        SystemName::Water => 0.005,
        _ => 0.01,
    };
    let steps_per_frame = match name {
        SystemName::Water => 4,
        _ => 5,
    };
    Ok(PdeRun {
        grid: PdeGrid { size, length },
        dt,
        frames: 1000,
        steps_per_frame,
    })
}

pub fn channel_names(name: SystemName) -> Vec<String> {
    let names: &[&str] = match name {
        SystemName::Water => &["h", "hu", "hv"],
        _ => &["u", "v"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Sum of a few random low-wavenumber Fourier modes, periodic on the grid.
pub fn smooth_random_field(grid: PdeGrid, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = grid.size;
    let modes: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let kx = rng.gen_range(-3i32..=3) as f64;
            let ky = rng.gen_range(-3i32..=3) as f64;
            (kx, ky, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.3..1.0))
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m.3).sum();
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 / n as f64, y as f64 / n as f64);
            let v: f64 = modes
                .iter()
                .map(|&(kx, ky, ph, a)| a * (2.0 * PI * (kx * fx + ky * fy) + ph).cos())
                .sum();
            out[y * n + x] = amplitude * v / norm;
        }
    }
    out
}

/// Default initial condition per system; `seed` perturbs it.
pub fn initial_field(spec: &SystemSpec, grid: PdeGrid, seed: u64) -> Result<Field> {
    let n = grid.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec.name {
        SystemName::Lo => {
            // single-armed spiral centred near the origin
            let cx = rng.gen_range(-0.5..0.5);
            let cy = rng.gen_range(-0.5..0.5);
            let mut u = vec![0.0; n * n];
            let mut v = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    let (px, py) = (grid.coord(x) - cx, grid.coord(y) - cy);
                    let r = (px * px + py * py).sqrt();
                    let th = py.atan2(px);
                    u[y * n + x] = r.tanh() * (th - r).cos();
                    v[y * n + x] = r.tanh() * (th - r).sin();
                }
            }
            Ok(vec![u, v])
        }
        SystemName::Bruss => {
            let (a, b) = (spec.param("a"), spec.param("b"));
            let du = smooth_random_field(grid, 0.3, &mut rng);
            let dv = smooth_random_field(grid, 0.3, &mut rng);
            Ok(vec![
                du.iter().map(|d| a + d).collect(),
                dv.iter().map(|d| b / a + d).collect(),
            ])
        }
        SystemName::Water => {
            let cx = rng.gen_range(-0.2..0.2) * grid.length;
            let cy = rng.gen_range(-0.2..0.2) * grid.length;
            let width = 0.1 * grid.length;
            let mut h = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    let (px, py) = (grid.coord(x) - cx, grid.coord(y) - cy);
                    h[y * n + x] = 1.0 + 0.5 * (-(px * px + py * py) / (width * width)).exp();
                }
            }
            Ok(vec![h, vec![0.0; n * n], vec![0.0; n * n]])
        }
        other => Err(Error::InvalidArgument(format!("{other} is not a PDE system"))),
    }
}

/// Largest stable explicit step for the run's diffusion or wave speed.
pub fn dt_limit(spec: &SystemSpec, grid: PdeGrid, field: &Field) -> f64 {
    let dx = grid.dx();
    match spec.name {
        SystemName::Water => {
            let g = spec.param("g_r");
            let (h, hu, hv) = (&field[0], &field[1], &field[2]);
            let mut speed: f64 = 0.0;
            for i in 0..h.len() {
                let hh = h[i].max(1e-12);
                let u = (hu[i] / hh).abs().max((hv[i] / hh).abs());
                speed = speed.max(u + (g * hh).sqrt());
            }
            if speed == 0.0 {
                f64::INFINITY
            } else {
                dx / (speed * 2f64.sqrt())
            }
        }
        _ => {
            let d = spec.param("d1").max(spec.param("d2"));
            if d == 0.0 {
                f64::INFINITY
            } else {
                dx * dx / (4.0 * d)
            }
        }
    }
}

#[inline]
fn neighbours(i: usize, n: usize) -> (usize, usize, usize, usize) {
    let (x, y) = (i % n, i / n);
    let left = y * n + (x + n - 1) % n;
    let right = y * n + (x + 1) % n;
    let up = ((y + n - 1) % n) * n + x;
    let down = ((y + 1) % n) * n + x;
    (left, right, up, down)
}

fn laplacian(f: &[f64], n: usize, inv_dx2: f64, out: &mut [f64]) {
    for i in 0..n * n {
        let (l, r, u, d) = neighbours(i, n);
        out[i] = (f[l] + f[r] + f[u] + f[d] - 4.0 * f[i]) * inv_dx2;
    }
}

fn step_reaction_diffusion(spec: &SystemSpec, grid: PdeGrid, dt: f64, f: &mut Field, scratch: &mut Field) {
    let n = grid.size;
    let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    let (d1, d2, k) = (spec.param("d1"), spec.param("d2"), spec.param("kinetics"));
    let (lap_u, lap_v) = scratch.split_at_mut(1);
    laplacian(&f[0], n, inv_dx2, &mut lap_u[0]);
    laplacian(&f[1], n, inv_dx2, &mut lap_v[0]);
    let (u, v) = f.split_at_mut(1);
    let (u, v) = (&mut u[0], &mut v[0]);
    match spec.name {
        SystemName::Lo => {
            let beta = spec.param("beta");
            for i in 0..n * n {
                let (a, b) = (u[i], v[i]);
                let r2 = a * a + b * b;
                let fu = (1.0 - r2) * a + beta * r2 * b;
                let fv = -beta * r2 * a + (1.0 - r2) * b;
                u[i] = a + dt * (k * fu + d1 * lap_u[0][i]);
                v[i] = b + dt * (k * fv + d2 * lap_v[0][i]);
            }
        }
        SystemName::Bruss => {
            let (pa, pb) = (spec.param("a"), spec.param("b"));
            for i in 0..n * n {
                let (a, b) = (u[i], v[i]);
                let fu = pa - (1.0 + pb) * a + b * a * a;
                let fv = pb * a - b * a * a;
                u[i] = a + dt * (k * fu + d1 * lap_u[0][i]);
                v[i] = b + dt * (k * fv + d2 * lap_v[0][i]);
            }
        }
        _ => unreachable!(),
    }
}

/// Lax-Friedrichs step of the single-layer shallow-water equations with flat
/// bathymetry.
fn step_water(spec: &SystemSpec, grid: PdeGrid, dt: f64, f: &mut Field, scratch: &mut Field) {
    let n = grid.size;
    let g = spec.param("g_r");
    let c = dt / (2.0 * grid.dx());
    let flux = |h: f64, hu: f64, hv: f64| -> ([f64; 3], [f64; 3]) {
        let (u, v) = (hu / h, hv / h);
        let p = 0.5 * g * h * h;
        ([hu, hu * u + p, hu * v], [hv, hv * u, hv * v + p])
    };
    for i in 0..n * n {
        let (l, r, up, d) = neighbours(i, n);
        let fl = flux(f[0][l], f[1][l], f[2][l]).0;
        let fr = flux(f[0][r], f[1][r], f[2][r]).0;
        let gu = flux(f[0][up], f[1][up], f[2][up]).1;
        let gd = flux(f[0][d], f[1][d], f[2][d]).1;
        for q in 0..3 {
            let avg = 0.25 * (f[q][l] + f[q][r] + f[q][up] + f[q][d]);
            scratch[q][i] = avg - c * (fr[q] - fl[q]) - c * (gd[q] - gu[q]);
        }
    }
    std::mem::swap(f, scratch);
}

fn check_run(spec: &SystemSpec, grid: PdeGrid, dt: f64, field: &Field) -> Result<()> {
    if spec.kind != SystemKind::Pde {
        return Err(Error::InvalidArgument(format!("{} is not a PDE system", spec.name)));
    }
    let n = grid.size;
    if n < 16 {
        return Err(Error::InvalidArgument(format!("grid size must be >= 16, got {n}")));
    }
    if field.len() != spec.dim || field.iter().any(|c| c.len() != n * n) {
        return Err(Error::InvalidArgument("initial field has wrong shape".into()));
    }
    let limit = dt_limit(spec, grid, field);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Unstable { dt, limit });
    }
    Ok(())
}

fn step(spec: &SystemSpec, grid: PdeGrid, dt: f64, field: &mut Field, scratch: &mut Field) {
    match spec.name {
        SystemName::Water => step_water(spec, grid, dt, field, scratch),
        _ => step_reaction_diffusion(spec, grid, dt, field, scratch),
    }
}

/// Advances `field` in place by `steps` explicit steps at full precision.
pub fn advance_field(spec: &SystemSpec, grid: PdeGrid, dt: f64, field: &mut Field, steps: usize) -> Result<()> {
    check_run(spec, grid, dt, field)?;
    let mut scratch: Field = vec![vec![0.0; grid.size * grid.size]; spec.dim];
    for k in 0..steps {
        step(spec, grid, dt, field, &mut scratch);
        if field.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: k + 1 });
        }
    }
    Ok(())
}

/// Explicit periodic finite-difference simulation; returns `run.frames`
/// frames, the first being the initial field.
pub fn simulate_pde(spec: &SystemSpec, run: &PdeRun, initial: &Field) -> Result<FrameSequence> {
    check_run(spec, run.grid, run.dt, initial)?;
    if run.frames == 0 || run.steps_per_frame == 0 {
        return Err(Error::InvalidArgument("need at least one frame and one step per frame".into()));
    }
    let n = run.grid.size;

    let mut field = initial.clone();
    let mut scratch: Field = vec![vec![0.0; n * n]; spec.dim];
    let mut data = Vec::with_capacity(run.frames * spec.dim * n * n);
    let mut times = Vec::with_capacity(run.frames);
    let mut steps = 0usize;
    for frame in 0..run.frames {
        if frame > 0 {
            for _ in 0..run.steps_per_frame {
                step(spec, run.grid, run.dt, &mut field, &mut scratch);
                steps += 1;
            }
            if field.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step: steps });
            }
        }
        times.push(steps as f64 * run.dt);
        for c in &field {
            data.extend(c.iter().map(|&v| v as f32));
        }
    }
    let meta = FrameMeta {
        channel_names: channel_names(spec.name),
        world: None,
    };
    FrameSequence::new(times, spec.dim, n, n, data, meta)
}
