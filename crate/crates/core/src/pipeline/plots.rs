use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::dynamics::Trajectory;
use crate::plot::{hstack, line_chart, Series, BLUE, GREY, ORANGE, RED};

/// Plot inputs collected from one run.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    /// File name prefix.
    pub label: String,
    /// Reference trajectory: ground truth (pixel) or encoded latents.
    pub reference: Option<Trajectory>,
    /// The selected equation integrated from the reference's first state.
    pub predicted: Option<Trajectory>,
    /// Trajectory the equation was fitted on (smoothed detections or latents).
    pub observed: Option<Trajectory>,
    /// `(iteration, fitness)` of every pool record.
    pub fitness: Vec<(usize, f64)>,
}

const PANEL: (u32, u32) = (360, 240);

fn overlay(reference: &Trajectory, predicted: &Trajectory) -> RgbImage {
    let t_ref = reference.times();
    let n = predicted.len().min(reference.len());
    let t_pred = &predicted.times()[..n];
    let panels: Vec<RgbImage> = (0..reference.dim())
        .map(|j| {
            let a = reference.column(j);
            let b = predicted.column(j);
            line_chart(
                PANEL.0,
                PANEL.1,
                &[
                    Series {
                        x: &t_ref,
                        y: &a,
                        color: GREY,
                        dots: false,
                    },
                    Series {
                        x: t_pred,
                        y: &b[..n],
                        color: RED,
                        dots: false,
                    },
                ],
            )
        })
        .collect();
    hstack(&panels)
}

/// Phase portrait of the first two coordinates, or a time series when the
/// trajectory is one-dimensional.
fn portrait(traj: &Trajectory) -> RgbImage {
    if traj.dim() >= 2 {
        let (a, b) = (traj.column(0), traj.column(1));
        line_chart(
            PANEL.1,
            PANEL.1,
            &[Series {
                x: &a,
                y: &b,
                color: BLUE,
                dots: false,
            }],
        )
    } else {
        let t = traj.times();
        let a = traj.column(0);
        line_chart(
            PANEL.0,
            PANEL.1,
            &[Series {
                x: &t,
                y: &a,
                color: BLUE,
                dots: false,
            }],
        )
    }
}

fn fitness_curve(points: &[(usize, f64)]) -> RgbImage {
    let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut best = f64::NEG_INFINITY;
    let running: Vec<f64> = y
        .iter()
        .map(|v| {
            best = best.max(*v);
            best
        })
        .collect();
    line_chart(
        PANEL.0,
        PANEL.1,
        &[
            Series {
                x: &x,
                y: &y,
                color: ORANGE,
                dots: true,
            },
            Series {
                x: &x,
                y: &running,
                color: BLUE,
                dots: false,
            },
        ],
    )
}

/// Writes `<label>_overlay.png`, `<label>_portrait.png` (a time series for
/// one-dimensional data) and `<label>_fitness.png` where inputs allow.
/// Failures are logged and skipped.
pub fn emit_plots(artifacts: &[RunArtifacts], dir: &Path) -> Vec<PathBuf> {
    let mut written = Vec::new();
    let mut save = |name: String, img: RgbImage| {
        let path = dir.join(name);
        match img.save(&path) {
            Ok(()) => written.push(path),
            Err(e) => log::warn!("could not write {}: {e}", path.display()),
        }
    };
    for a in artifacts {
        if let (Some(r), Some(p)) = (&a.reference, &a.predicted) {
            save(format!("{}_overlay.png", a.label), overlay(r, p));
        }
        if let Some(t) = a.observed.as_ref().or(a.reference.as_ref()) {
            save(format!("{}_portrait.png", a.label), portrait(t));
        }
        if !a.fitness.is_empty() {
            save(format!("{}_fitness.png", a.label), fitness_curve(&a.fitness));
        }
    }
    written
}
