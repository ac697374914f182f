//! Minimal raster drawing: lines, discs, a bitmap digit font and line charts.

use image::{Rgb, RgbImage};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const GREY: Rgb<u8> = Rgb([150, 150, 150]);
pub const BLUE: Rgb<u8> = Rgb([30, 90, 220]);
pub const RED: Rgb<u8> = Rgb([220, 40, 40]);
pub const ORANGE: Rgb<u8> = Rgb([240, 150, 20]);

/// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '-' => [0, 0, 7, 0, 0],
        '.' => [0, 0, 0, 0, 2],
        'e' => [0, 7, 7, 4, 7],
        ' ' => [0; 5],
        _ => return None,
    })
}

pub fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Width in pixels of `text` drawn at `scale`.
pub fn text_width(text: &str, scale: u32) -> u32 {
    text.chars().count() as u32 * 4 * scale
}

/// Draws digits (and `-`, `.`, `e`) with the top-left corner at `(x, y)`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: u32, c: Rgb<u8>) {
    let s = scale.max(1) as i64;
    for (k, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        let gx = x + k as i64 * 4 * s;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    for dy in 0..s {
                        for dx in 0..s {
                            put(img, gx + col * s + dx, y + r as i64 * s + dy, c);
                        }
                    }
                }
            }
        }
    }
}

pub fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(
            img,
            (a.0 + t * (b.0 - a.0)).floor() as i64,
            (a.1 + t * (b.1 - a.1)).floor() as i64,
            c,
        );
    }
}

/// Fills every pixel whose centre lies within `r` of `(cx, cy)`.
pub fn fill_disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, c: Rgb<u8>) {
    let (x0, x1) = ((cx - r - 1.0).floor() as i64, (cx + r + 1.0).ceil() as i64);
    let (y0, y1) = ((cy - r - 1.0).floor() as i64, (cy + r + 1.0).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                put(img, x, y, c);
            }
        }
    }
}

fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub struct Series<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub color: Rgb<u8>,
    /// Draw markers instead of a connected line.
    pub dots: bool,
}

/// White canvas with a framed plot area fitted to all series, range
/// labels in the corners.
pub fn line_chart(width: u32, height: u32, series: &[Series]) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let margin = 24.0;
    let (x_lo, x_hi) = nice_range(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y_lo, y_hi) = nice_range(series.iter().flat_map(|s| s.y.iter().copied()));
    let (w, h) = (width as f64 - 2.0 * margin, height as f64 - 2.0 * margin);
    let map = |x: f64, y: f64| {
        (
            margin + (x - x_lo) / (x_hi - x_lo) * w,
            margin + (y_hi - y) / (y_hi - y_lo) * h,
        )
    };
    let corners = [(margin, margin), (margin + w, margin), (margin + w, margin + h), (margin, margin + h)];
    for k in 0..4 {
        draw_line(&mut img, corners[k], corners[(k + 1) % 4], BLACK);
    }
    for s in series {
        let mut prev: Option<(f64, f64)> = None;
        for (&x, &y) in s.x.iter().zip(s.y) {
            if !(x.is_finite() && y.is_finite()) {
                prev = None;
                continue;
            }
            let p = map(x, y);
            if s.dots {
                fill_disc(&mut img, p.0, p.1, 1.5, s.color);
            } else if let Some(q) = prev {
                draw_line(&mut img, q, p, s.color);
            }
            prev = Some(p);
        }
    }
    let label = |v: f64| format!("{v:.2}");
    draw_text(&mut img, margin as i64, (margin + h + 6.0) as i64, &label(x_lo), 1, BLACK);
    let xr = label(x_hi);
    draw_text(&mut img, (margin + w) as i64 - text_width(&xr, 1) as i64, (margin + h + 6.0) as i64, &xr, 1, BLACK);
    draw_text(&mut img, 2, (margin + h) as i64 - 5, &label(y_lo), 1, BLACK);
    draw_text(&mut img, 2, margin as i64 - 8, &label(y_hi), 1, BLACK);
    img
}

/// Places panels side by side on one canvas.
pub fn hstack(panels: &[RgbImage]) -> RgbImage {
    let w = panels.iter().map(|p| p.width()).sum::<u32>().max(1);
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(1);
    let mut out = RgbImage::from_pixel(w, h, WHITE);
    let mut x0 = 0;
    for p in panels {
        image::imageops::replace(&mut out, p, x0 as i64, 0);
        x0 += p.width();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_draws_inside_bounds() {
        let mut img = RgbImage::new(40, 10);
        draw_text(&mut img, 1, 1, "-0.5e1", 1, WHITE);
        assert!(img.pixels().any(|p| *p == WHITE));
        draw_text(&mut img, 38, 8, "888", 2, WHITE);
    }

    #[test]
    fn chart_is_deterministic() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = [Series { x: &x, y: &y, color: BLUE, dots: false }];
        let a = line_chart(200, 120, &s);
        assert_eq!(a, line_chart(200, 120, &s));
        assert!(a.pixels().any(|p| *p == BLUE));
    }

    #[test]
    fn disc_centroid() {
        let mut img = RgbImage::new(50, 50);
        fill_disc(&mut img, 20.0, 30.0, 4.0, RED);
        let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (x, y, p) in img.enumerate_pixels() {
            if *p == RED {
                n += 1.0;
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
            }
        }
        assert!((sx / n - 20.0).abs() < 1e-9 && (sy / n - 30.0).abs() < 1e-9);
    }
}
