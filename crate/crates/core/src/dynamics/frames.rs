use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VERT";
const VERSION: u16 = 1;

/// Affine map between world coordinates (y up) and pixel coordinates
/// (x right, y down, pixel centers at half-integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub width: usize,
    pub height: usize,
}

impl WorldMap {
    pub fn new(bounds: [f64; 4], width: usize, height: usize) -> Self {
        Self {
            x_min: bounds[0],
            x_max: bounds[1],
            y_min: bounds[2],
            y_max: bounds[3],
            width,
            height,
        }
    }

    pub fn px_per_unit(&self) -> (f64, f64) {
        (
            self.width as f64 / (self.x_max - self.x_min),
            self.height as f64 / (self.y_max - self.y_min),
        )
    }

    pub fn to_pixel(&self, w: [f64; 2]) -> [f64; 2] {
        let (sx, sy) = self.px_per_unit();
        [(w[0] - self.x_min) * sx, (self.y_max - w[1]) * sy]
    }

    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (sx, sy) = self.px_per_unit();
        [self.x_min + p[0] / sx, self.y_max - p[1] / sy]
    }

    pub fn contains(&self, w: [f64; 2]) -> bool {
        w[0] >= self.x_min && w[0] <= self.x_max && w[1] >= self.y_min && w[1] <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub channel_names: Vec<String>,
    pub world: Option<WorldMap>,
}

/// Time-ordered stack of `channels x height x width` frames, stored row-major
/// as `(t, c, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub times: Vec<f64>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub meta: FrameMeta,
}

impl FrameSequence {
    pub fn new(
        times: Vec<f64>,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        meta: FrameMeta,
    ) -> Result<Self> {
        if data.len() != times.len() * channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "frame payload has {} values, expected {}",
                data.len(),
                times.len() * channels * height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("frames contain non-finite pixels".into()));
        }
        Ok(Self {
            times,
            channels,
            height,
            width,
            data,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.frame(i)[c * plane..(c + 1) * plane]
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Keeps the first `n` frames.
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.times.truncate(n);
        self.data.truncate(n * self.frame_len());
    }

    /// Area-averaged resampling of every channel to `size x size`.
    pub fn downscale(&self, size: usize) -> FrameSequence {
        if size == self.width && size == self.height {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.len() * self.channels * size * size);
        for i in 0..self.len() {
            for c in 0..self.channels {
                let plane = self.channel(i, c);
                for oy in 0..size {
                    let y0 = oy as f64 * h as f64 / size as f64;
                    let y1 = (oy + 1) as f64 * h as f64 / size as f64;
                    for ox in 0..size {
                        let x0 = ox as f64 * w as f64 / size as f64;
                        let x1 = (ox + 1) as f64 * w as f64 / size as f64;
                        out.push(area_mean(plane, w, x0, x1, y0, y1) as f32);
                    }
                }
            }
        }
        FrameSequence {
            times: self.times.clone(),
            channels: self.channels,
            height: size,
            width: size,
            data: out,
            meta: FrameMeta {
                channel_names: self.meta.channel_names.clone(),
                world: None,
            },
        }
    }

    pub fn write_vert<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&4u16.to_le_bytes())?;
        for dim in [self.len(), self.channels, self.height, self.width] {
            let dim = u32::try_from(dim)
                .map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
            w.write_all(&dim.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a frame tensor. Times are reconstructed as `i * dt`.
    pub fn read_vert<R: Read>(mut r: R, dt: f64) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::InvalidArgument("not a VERT frame file".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(Error::InvalidArgument(format!("unsupported VERT version {version}")));
        }
        let rank = u16::from_le_bytes([head[6], head[7]]) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            dims.push(u32::from_le_bytes(b) as usize);
        }
        let (n, c, h, w) = match dims[..] {
            [n, c, h, w] => (n, c, h, w),
            [n, h, w] => (n, 1, h, w),
            _ => return Err(Error::InvalidArgument(format!("unsupported VERT rank {rank}"))),
        };
        let mut bytes = vec![0u8; n * c * h * w * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let meta = FrameMeta {
            channel_names: (0..c).map(|i| format!("c{i}")).collect(),
            world: None,
        };
        FrameSequence::new((0..n).map(|i| i as f64 * dt).collect(), c, h, w, data, meta)
    }
}

fn area_mean(plane: &[f32], w: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let mut acc = 0.0;
    let mut area = 0.0;
    let mut y = y0.floor() as usize;
    while (y as f64) < y1 {
        let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
        let mut x = x0.floor() as usize;
        while (x as f64) < x1 {
            let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
            acc += plane[y * w + x] as f64 * wx * wy;
            area += wx * wy;
            x += 1;
        }
        y += 1;
    }
    acc / area
}

/// Adds zero-mean Gaussian noise with standard deviation
/// `sigma * std(all pixels)`.
pub fn add_observation_noise(frames: &FrameSequence, sigma: f64, seed: u64) -> Result<FrameSequence> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(frames.clone());
    }
    let n = frames.data.len() as f64;
    let mean = frames.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = frames
        .data
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let scale = sigma * var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = frames.clone();
    for v in out.data.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v = (*v as f64 + scale * e) as f32;
    }
    Ok(out)
}
