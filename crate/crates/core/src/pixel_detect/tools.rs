use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::plot::{draw_text, fill_disc, put, RED};

pub const GRID: Rgb<u8> = Rgb([0, 170, 0]);
const LABEL: Rgb<u8> = Rgb([250, 220, 0]);
const MARKER_RADIUS: f64 = 4.0;

/// Axis-aligned map `full = (sx * x + tx, sy * y + ty)` from view pixels to
/// full-frame pixels (continuous coordinates, pixel `i` spans `[i, i+1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        sx: 1.0,
        sy: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [self.sx * p[0] + self.tx, self.sy * p[1] + self.ty]
    }

    pub fn inverse(&self) -> Affine {
        Affine {
            sx: 1.0 / self.sx,
            sy: 1.0 / self.sy,
            tx: -self.tx / self.sx,
            ty: -self.ty / self.sy,
        }
    }

    /// `self` after `inner`.
    pub fn compose(&self, inner: &Affine) -> Affine {
        Affine {
            sx: self.sx * inner.sx,
            sy: self.sy * inner.sy,
            tx: self.sx * inner.tx + self.tx,
            ty: self.sy * inner.ty + self.ty,
        }
    }
}

/// Grid layout in full-frame pixels, and where the drawn view sits in the
/// full frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxesSpec {
    pub ticks: usize,
    pub label_scale: u32,
    pub full_size: (u32, u32),
    pub to_full: Affine,
}

impl AxesSpec {
    pub fn for_frame(width: u32, height: u32, ticks: usize) -> Self {
        Self {
            ticks,
            label_scale: 1,
            full_size: (width, height),
            to_full: Affine::IDENTITY,
        }
    }

    pub fn with_view(mut self, to_full: Affine) -> Self {
        self.to_full = to_full;
        self
    }

    /// Full-frame positions of the gridlines along one axis.
    pub fn lines(&self, extent: u32) -> Vec<f64> {
        (0..self.ticks)
            .map(|k| (k as f64 + 0.5) * extent as f64 / self.ticks as f64)
            .collect()
    }
}

/// Grayscale rendering of an intensity plane (values clamped to [0, 1]).
pub fn frame_to_rgb(plane: &[f32], width: usize, height: usize) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = (plane[y as usize * width + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

/// Copy of `img` with gridlines, edge ticks and full-frame pixel labels.
pub fn overlay_measurement(img: &RgbImage, axes: &AxesSpec) -> Result<RgbImage> {
    if axes.ticks == 0 {
        return Err(Error::InvalidArgument("at least one tick per axis required".into()));
    }
    let (fw, fh) = axes.full_size;
    let sx = fw as f64 / axes.ticks as f64 / axes.to_full.sx;
    let sy = fh as f64 / axes.ticks as f64 / axes.to_full.sy;
    if sx < 2.0 || sy < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "tick spacing {:.2} px is below 2 px",
            sx.min(sy)
        )));
    }
    let mut out = img.clone();
    let (w, h) = (out.width() as i64, out.height() as i64);
    let inv = axes.to_full.inverse();
    let scale = axes.label_scale.max(1);
    let cols: Vec<(i64, f64)> = axes
        .lines(fw)
        .into_iter()
        .map(|x| ((inv.sx * x + inv.tx).floor() as i64, x))
        .filter(|(c, _)| (0..w).contains(c))
        .collect();
    let rows: Vec<(i64, f64)> = axes
        .lines(fh)
        .into_iter()
        .map(|y| ((inv.sy * y + inv.ty).floor() as i64, y))
        .filter(|(r, _)| (0..h).contains(r))
        .collect();
    for &(c, _) in &cols {
        for y in 0..h {
            put(&mut out, c, y, GRID);
        }
    }
    for &(r, _) in &rows {
        for x in 0..w {
            put(&mut out, x, r, GRID);
        }
    }
    for &(c, v) in &cols {
        for d in 1..=3 {
            put(&mut out, c - d, h - 1, LABEL);
            put(&mut out, c + d, h - 1, LABEL);
        }
        draw_text(&mut out, c + 2, 2, &format!("{}", v.round() as i64), scale, LABEL);
    }
    for &(r, v) in &rows {
        for d in 1..=3 {
            put(&mut out, 0, r - d, LABEL);
            put(&mut out, 0, r + d, LABEL);
        }
        draw_text(&mut out, 2, r + 2, &format!("{}", v.round() as i64), scale, LABEL);
    }
    Ok(out)
}

/// Quadrant numbering: 1 top-right, 2 top-left, 3 bottom-left, 4 bottom-right.
pub fn quadrant_of(p: [f64; 2], width: u32, height: u32) -> u8 {
    let right = p[0] >= (width / 2) as f64;
    let bottom = p[1] >= (height / 2) as f64;
    match (right, bottom) {
        (true, false) => 1,
        (false, false) => 2,
        (false, true) => 3,
        (true, true) => 4,
    }
}

/// Pixel box `[x0, x1, y0, y1)` of a quadrant.
pub(crate) fn quadrant_box(quadrant: u8, width: u32, height: u32) -> Result<[u32; 4]> {
    let (w2, h2) = (width / 2, height / 2);
    Ok(match quadrant {
        1 => [w2, width, 0, h2],
        2 => [0, w2, 0, h2],
        3 => [0, w2, h2, height],
        4 => [w2, width, h2, height],
        q => return Err(Error::InvalidArgument(format!("quadrant {q} is not in 1..=4"))),
    })
}

/// The quadrant sub-image magnified 2x (nearest neighbour) and the map
/// from its pixels back to the input's.
pub fn crop_quadrant(img: &RgbImage, quadrant: u8) -> Result<(RgbImage, Affine)> {
    let [x0, x1, y0, y1] = quadrant_box(quadrant, img.width(), img.height())?;
    let out = RgbImage::from_fn((x1 - x0) * 2, (y1 - y0) * 2, |x, y| *img.get_pixel(x0 + x / 2, y0 + y / 2));
    let t = Affine {
        sx: 0.5,
        sy: 0.5,
        tx: x0 as f64,
        ty: y0 as f64,
    };
    Ok((out, t))
}

/// Copy of `img` with a red dot at `point`; points outside the image are
/// clipped to its border and flagged.
pub fn replay_marker(img: &RgbImage, point: [f64; 2]) -> (RgbImage, bool) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let cx = point[0].clamp(0.0, w - 1e-9);
    let cy = point[1].clamp(0.0, h - 1e-9);
    let clipped = cx != point[0] || cy != point[1] || !point[0].is_finite() || !point[1].is_finite();
    if clipped {
        log::warn!("marker at ({:.1}, {:.1}) clipped to the frame", point[0], point[1]);
    }
    let mut out = img.clone();
    fill_disc(&mut out, cx, cy, MARKER_RADIUS, RED);
    (out, clipped)
}
