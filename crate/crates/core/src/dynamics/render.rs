use super::frames::{FrameMeta, FrameSequence, WorldMap};
use super::ode::Trajectory;
use crate::error::{Error, Result};

const SUPERSAMPLE: usize = 8;

/// Renders a bright anti-aliased disc (value 1 on a 0 background) at the
/// pixel image of each state.
pub fn render_pixel_video(
    traj: &Trajectory,
    resolution: (usize, usize),
    object_radius: f64,
    world_bounds: [f64; 4],
) -> Result<FrameSequence> {
    if traj.dim() != 2 {
        return Err(Error::InvalidArgument("pixel rendering needs 2-D states".into()));
    }
    let (width, height) = resolution;
    let map = WorldMap::new(world_bounds, width, height);
    let outside: Vec<usize> = (0..traj.len())
        .filter(|&i| !map.contains([traj.states[(i, 0)], traj.states[(i, 1)]]))
        .collect();
    if !outside.is_empty() {
        return Err(Error::OutOfFrame { indices: outside });
    }
    let plane = width * height;
    let mut data = vec![0f32; traj.len() * plane];
    for (i, frame) in data.chunks_exact_mut(plane).enumerate() {
        let center = map.to_pixel([traj.states[(i, 0)], traj.states[(i, 1)]]);
        draw_disc(frame, width, height, center, object_radius);
    }
    let meta = FrameMeta {
        channel_names: vec!["intensity".into()],
        world: Some(map),
    };
    FrameSequence::new(traj.times(), 1, height, width, data, meta)
}

fn draw_disc(frame: &mut [f32], width: usize, height: usize, c: [f64; 2], r: f64) {
    let x0 = (c[0] - r - 1.0).floor().max(0.0) as usize;
    let x1 = ((c[0] + r + 1.0).ceil() as usize).min(width);
    let y0 = (c[1] - r - 1.0).floor().max(0.0) as usize;
    let y1 = ((c[1] + r + 1.0).ceil() as usize).min(height);
    let r2 = r * r;
    // a pixel is fully inside/outside when its farthest/nearest corner is
    let half_diag = std::f64::consts::FRAC_1_SQRT_2;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((px - c[0]).powi(2) + (py - c[1]).powi(2)).sqrt();
            let cov = if d + half_diag <= r {
                1.0
            } else if d - half_diag >= r {
                0.0
            } else {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let qx = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let qy = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        if (qx - c[0]).powi(2) + (qy - c[1]).powi(2) <= r2 {
                            hits += 1;
                        }
                    }
                }
                hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
            };
            if cov > 0.0 {
                let slot = &mut frame[y * width + x];
                *slot = slot.max(cov as f32);
            }
        }
    }
}

/// Intensity-weighted centroid of above-background pixels, optionally
/// restricted to the pixel box `[x0, x1) x [y0, y1)`.
pub fn intensity_centroid(
    plane: &[f32],
    width: usize,
    height: usize,
    region: Option<[usize; 4]>,
) -> Option<[f64; 2]> {
    let [x0, x1, y0, y1] = region.unwrap_or([0, width, 0, height]);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in y0..y1.min(height) {
        let row = &plane[y * width..(y + 1) * width];
        for (x, &v) in row.iter().enumerate().take(x1.min(width)).skip(x0) {
            if v > 0.0 {
                let w = v as f64;
                sw += w;
                sx += w * (x as f64 + 0.5);
                sy += w * (y as f64 + 0.5);
            }
        }
    }
    (sw > 0.0).then(|| [sx / sw, sy / sw])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_ode, SystemName, SystemSpec};
    use nalgebra::DMatrix;

    #[test]
    fn origin_maps_to_center() {
        let traj = Trajectory::new(0.0, 1.0, DMatrix::zeros(2, 2)).unwrap();
        let f = render_pixel_video(&traj, (500, 500), 10.0, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let c = intensity_centroid(f.frame(0), 500, 500, None).unwrap();
        assert!((c[0] - 250.0).abs() <= 0.5 && (c[1] - 250.0).abs() <= 0.5, "{c:?}");
    }

    #[test]
    fn linear_video_has_200_frames() {
        let spec = SystemSpec::new(SystemName::Linear);
        let setup = spec.pixel_setup().unwrap();
        let traj = integrate_ode(&spec, &setup.z0, setup.dt, setup.frames).unwrap();
        let f = render_pixel_video(&traj, (500, 500), 10.0, setup.bounds).unwrap();
        assert_eq!(f.len(), 200);
        assert_eq!((f.width, f.height), (500, 500));
        // centroid re-projected to world units matches the state
        let map = f.meta.world.unwrap();
        let tol = 0.5 / map.px_per_unit().0;
        for i in (0..200).step_by(17) {
            let c = intensity_centroid(f.frame(i), 500, 500, None).unwrap();
            let w = map.to_world(c);
            assert!((w[0] - traj.states[(i, 0)]).abs() < tol);
            assert!((w[1] - traj.states[(i, 1)]).abs() < tol);
        }
    }

    #[test]
    fn out_of_frame_lists_indices() {
        let states = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 5.0, 0.0, 0.0, -7.0]);
        let traj = Trajectory::new(0.0, 1.0, states).unwrap();
        match render_pixel_video(&traj, (64, 64), 3.0, [-1.0, 1.0, -1.0, 1.0]) {
            Err(Error::OutOfFrame { indices }) => assert_eq!(indices, vec![1, 2]),
            other => panic!("{other:?}"),
        }
    }
}
