use image::RgbImage;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use super::locator::{Locator, VisualContext};
use super::tools::{crop_quadrant, frame_to_rgb, overlay_measurement, quadrant_box, replay_marker, Affine, AxesSpec};
use crate::dynamics::{FrameSequence, Trajectory, WorldMap};
use crate::error::{Error, Result};

/// Which visual tools run before and after locating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToolSet {
    pub measure: bool,
    pub amplifier: bool,
    pub replayer: bool,
}

impl ToolSet {
    pub const ALL: ToolSet = ToolSet {
        measure: true,
        amplifier: true,
        replayer: true,
    };
    pub const NONE: ToolSet = ToolSet {
        measure: false,
        amplifier: false,
        replayer: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub tools: ToolSet,
    pub ticks: usize,
    pub label_scale: u32,
    /// Largest tolerated fraction of frames without a detection.
    pub max_missing: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            tools: ToolSet::ALL,
            ticks: 10,
            label_scale: 1,
            max_missing: 0.2,
        }
    }
}

/// Per-frame pixel detections (`None` marks a missing frame).
#[derive(Debug, Clone)]
pub struct Detection {
    pub points: Vec<Option<[f64; 2]>>,
    pub world: WorldMap,
    pub t0: f64,
    pub dt: f64,
    /// One JSON object per frame.
    pub transcript: Vec<Value>,
}

impl Detection {
    pub fn missing(&self) -> usize {
        self.points.iter().filter(|p| p.is_none()).count()
    }

    /// `(frame index, pixel point)` for every detected frame.
    pub fn detected(&self) -> Vec<(usize, [f64; 2])> {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (i, p)))
            .collect()
    }

    /// World-unit trajectory over all frames, with missing frames filled by
    /// linear interpolation (nearest detection at the ends).
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let known = self.detected();
        if known.is_empty() {
            return Err(Error::DetectionFailed {
                missing: self.points.len(),
                total: self.points.len(),
            });
        }
        let n = self.points.len();
        let mut states = DMatrix::zeros(n, 2);
        let mut next = 0;
        for i in 0..n {
            while next < known.len() && known[next].0 < i {
                next += 1;
            }
            let p = match (next.checked_sub(1).map(|k| known[k]), known.get(next)) {
                (_, Some(&(j, p))) if j == i => p,
                (Some((a, pa)), Some(&(b, pb))) => {
                    let t = (i - a) as f64 / (b - a) as f64;
                    [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
                }
                (Some((_, pa)), None) => pa,
                (None, Some(&(_, pb))) => pb,
                (None, None) => unreachable!("known is nonempty"),
            };
            let w = self.world.to_world(p);
            states[(i, 0)] = w[0];
            states[(i, 1)] = w[1];
        }
        Trajectory::new(self.t0, self.dt, states)
    }

    pub fn transcript_jsonl(&self) -> String {
        self.transcript.iter().map(|v| format!("{v}\n")).collect()
    }
}

/// Locates the target in every frame, passing earlier estimates along as
/// history.
pub fn detect_sequence(frames: &FrameSequence, locator: &mut dyn Locator, opts: &DetectOptions) -> Result<Detection> {
    let world = frames
        .meta
        .world
        .ok_or_else(|| Error::InvalidArgument("frames carry no world-to-pixel map".into()))?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to detect".into()));
    }
    let (w, h) = (frames.width, frames.height);
    let axes = AxesSpec {
        label_scale: opts.label_scale,
        ..AxesSpec::for_frame(w as u32, h as u32, opts.ticks)
    };
    let images = locator.wants_images();
    let blank = RgbImage::new(1, 1);
    let mut points = Vec::with_capacity(frames.len());
    let mut history: Vec<[f64; 2]> = Vec::new();
    let mut transcript = Vec::with_capacity(frames.len());
    for i in 0..frames.len() {
        let raw = frames.channel(i, 0);
        let base = if images { frame_to_rgb(raw, w, h) } else { blank.clone() };
        let annotate = |img: &RgbImage, t: Affine| -> Result<RgbImage> {
            if images && opts.tools.measure {
                overlay_measurement(img, &axes.with_view(t))
            } else {
                Ok(img.clone())
            }
        };
        let full_view = annotate(&base, Affine::IDENTITY)?;
        let full_region = [0, w, 0, h];
        let mut view = full_view.clone();
        let mut to_full = Affine::IDENTITY;
        let mut region = full_region;
        let mut log = json!({"frame": i});
        let mut calls = Vec::new();
        let n = frames.len();
        if opts.tools.amplifier {
            calls.push("quadrant");
            let q = locator.quadrant(&context(i, n, raw, (w, h), &full_view, Affine::IDENTITY, full_region, &history))?;
            log["quadrant"] = json!(q);
            if let Some(q) = q {
                let b = quadrant_box(q, w as u32, h as u32)?;
                let crop_region = [b[0] as usize, b[1] as usize, b[2] as usize, b[3] as usize];
                let (crop, t) = if images {
                    let (c, t) = crop_quadrant(&base, q)?;
                    (annotate(&c, t)?, t)
                } else {
                    let t = Affine {
                        sx: 0.5,
                        sy: 0.5,
                        tx: b[0] as f64,
                        ty: b[2] as f64,
                    };
                    (blank.clone(), t)
                };
                calls.push("confirm");
                let ok = locator.confirm(&context(i, n, raw, (w, h), &crop, t, crop_region, &history), q)?;
                log["confirmed"] = json!(ok);
                if ok {
                    view = crop;
                    to_full = t;
                    region = crop_region;
                } else {
                    log["fallback"] = json!("full_frame");
                }
            }
        }
        calls.push("locate");
        let mut point = locator.locate(&context(i, n, raw, (w, h), &view, to_full, region, &history))?;
        log["located"] = json!(point);
        if let (true, Some(p)) = (opts.tools.replayer, point) {
            calls.push("replay");
            let marked = if images {
                let (m, clipped) = replay_marker(&view, to_full.inverse().apply(p));
                if clipped {
                    log["marker_clipped"] = json!(true);
                }
                m
            } else {
                blank.clone()
            };
            point = locator.refine(&context(i, n, raw, (w, h), &view, to_full, region, &history), &marked, p)?;
            log["refined"] = json!(point);
        }
        if let Some(reply) = locator.last_reply() {
            log["reply"] = json!(reply);
        }
        log["tools"] = json!(calls);
        log["point"] = json!(point);
        if point.is_none() {
            log["missing"] = json!(true);
        }
        transcript.push(log);
        if let Some(p) = point {
            history.push(p);
        }
        points.push(point);
    }
    let det = Detection {
        points,
        world,
        t0: frames.times[0],
        dt: frames.dt(),
        transcript,
    };
    let missing = det.missing();
    if missing as f64 > opts.max_missing * frames.len() as f64 {
        return Err(Error::DetectionFailed {
            missing,
            total: frames.len(),
        });
    }
    Ok(det)
}

#[allow(clippy::too_many_arguments)]
fn context<'a>(
    frame_index: usize,
    frame_count: usize,
    raw: &'a [f32],
    (width, height): (usize, usize),
    view: &'a RgbImage,
    to_full: Affine,
    region: [usize; 4],
    history: &'a [[f64; 2]],
) -> VisualContext<'a> {
    VisualContext {
        frame_index,
        frame_count,
        raw,
        width,
        height,
        view,
        to_full,
        region,
        history,
    }
}
