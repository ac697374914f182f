use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use super::locator::parse_decision;
use crate::dynamics::Trajectory;
use crate::error::Result;
use crate::llm::{Advisor, ChatImage};
use crate::plot::{hstack, line_chart, Series, BLUE, GREY};
use crate::smoothing::{sg_filter, FilterParams};

/// An advisor's verdict on one smoothing attempt. Proposed parameters are
/// unvalidated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Judgement {
    Accept,
    Retry { h: usize, p: usize },
    Unparsable(String),
}

pub trait SmoothingAdvisor {
    fn judge(
        &mut self,
        raw: &Trajectory,
        smoothed: &Trajectory,
        params: FilterParams,
        history: &[FilterParams],
    ) -> Result<Judgement>;
}

fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// Accepts once the smoothed-vs-raw RMSE moves by less than 1% relative
/// to the previous attempt; otherwise widens the window by 4. A jump of
/// more than 10% means the wider window started eating signal, so the
/// previous parameters are requested and then accepted.
#[derive(Debug, Clone, Default)]
pub struct DeterministicJudge {
    previous: Option<(f64, FilterParams)>,
    reverted: bool,
}

impl DeterministicJudge {
    pub const SETTLE: f64 = 0.01;
    pub const JUMP: f64 = 0.10;

    pub fn new() -> Self {
        Self::default()
    }
}

impl SmoothingAdvisor for DeterministicJudge {
    fn judge(&mut self, raw: &Trajectory, smoothed: &Trajectory, params: FilterParams, _history: &[FilterParams]) -> Result<Judgement> {
        if self.reverted {
            return Ok(Judgement::Accept);
        }
        let r = rmse(&raw.states, &smoothed.states);
        let verdict = match self.previous {
            _ if r == 0.0 => Judgement::Accept,
            Some((prev, _)) if (r - prev).abs() <= Self::SETTLE * prev => Judgement::Accept,
            Some((prev, before)) if r > (1.0 + Self::JUMP) * prev => {
                self.reverted = true;
                Judgement::Retry { h: before.h, p: before.p }
            }
            _ => Judgement::Retry {
                h: params.h + 4,
                p: params.p,
            },
        };
        self.previous = Some((r, params));
        Ok(verdict)
    }
}

/// Returns a fixed sequence of verdicts, then accepts.
#[derive(Debug, Clone)]
pub struct ScriptedJudge {
    script: Vec<Judgement>,
    at: usize,
}

impl ScriptedJudge {
    pub fn new(script: Vec<Judgement>) -> Self {
        Self { script, at: 0 }
    }
}

impl SmoothingAdvisor for ScriptedJudge {
    fn judge(&mut self, _: &Trajectory, _: &Trajectory, _: FilterParams, _: &[FilterParams]) -> Result<Judgement> {
        let j = self.script.get(self.at).cloned().unwrap_or(Judgement::Accept);
        self.at += 1;
        Ok(j)
    }
}

/// Shows the advisor raw and filtered coordinates side by side.
pub struct AdvisorJudge {
    advisor: Arc<Advisor>,
}

impl AdvisorJudge {
    pub fn new(advisor: Arc<Advisor>) -> Self {
        Self { advisor }
    }
}

pub(crate) fn comparison_plot(raw: &Trajectory, smoothed: &Trajectory) -> image::RgbImage {
    let t = raw.times();
    let panels: Vec<_> = (0..raw.dim())
        .map(|j| {
            let (a, b) = (raw.column(j), smoothed.column(j));
            line_chart(
                360,
                240,
                &[
                    Series { x: &t, y: &a, color: GREY, dots: true },
                    Series { x: &t, y: &b, color: BLUE, dots: false },
                ],
            )
        })
        .collect();
    hstack(&panels)
}

impl SmoothingAdvisor for AdvisorJudge {
    fn judge(&mut self, raw: &Trajectory, smoothed: &Trajectory, params: FilterParams, history: &[FilterParams]) -> Result<Judgement> {
        let hist = if history.is_empty() {
            "none".to_string()
        } else {
            history.iter().map(|f| format!("h={},p={}", f.h, f.p)).collect::<Vec<_>>().join("; ")
        };
        let reply = self.advisor.ask(
            "smoothing_judge",
            &[("h", params.h.to_string()), ("p", params.p.to_string()), ("history", hist)],
            vec![ChatImage::new(comparison_plot(raw, smoothed))],
        )?;
        Ok(match parse_decision(&reply) {
            Some(d) if d.starts_with("accept") => Judgement::Accept,
            Some(d) => match d.split_once(',').map(|(a, b)| (a.trim().parse(), b.trim().parse())) {
                Some((Ok(h), Ok(p))) => Judgement::Retry { h, p },
                _ => Judgement::Unparsable(reply),
            },
            None => Judgement::Unparsable(reply),
        })
    }
}

fn filter_traj(traj: &Trajectory, params: FilterParams) -> Result<Trajectory> {
    let mut states = traj.states.clone();
    for j in 0..traj.dim() {
        let col = sg_filter(&traj.column(j), params)?;
        states.set_column(j, &nalgebra::DVector::from_vec(col));
    }
    Trajectory::new(traj.t0, traj.dt, states)
}

fn usable(h: usize, p: usize, n: usize) -> Option<FilterParams> {
    FilterParams::new(h, p).ok().filter(|f| f.h <= n)
}

/// Filters from `(11, 3)` and lets the advisor accept or re-tune, at most
/// `max_iters` passes. Returns the last filtered trajectory, its
/// parameters and one transcript entry per pass.
pub fn smooth_with_feedback(
    traj: &Trajectory,
    advisor: &mut dyn SmoothingAdvisor,
    max_iters: usize,
) -> Result<(Trajectory, FilterParams, Vec<Value>)> {
    let n = traj.len();
    let mut params = FilterParams::default();
    if params.h > n {
        // shorter series than the default window: largest odd window that fits
        let h = if n % 2 == 1 { n } else { n - 1 };
        params = FilterParams::new(h.max(3), params.p.min(h.saturating_sub(1)))?;
    }
    let mut history: Vec<FilterParams> = Vec::new();
    let mut transcript = Vec::new();
    let mut smoothed = filter_traj(traj, params)?;
    for iter in 1..=max_iters.max(1) {
        let mut verdict = advisor.judge(traj, &smoothed, params, &history)?;
        let mut entry = json!({"iter": iter, "h": params.h, "p": params.p, "verdict": format!("{verdict:?}")});
        let proposed = |v: &Judgement| match v {
            Judgement::Retry { h, p } => usable(*h, *p, n),
            _ => None,
        };
        if !matches!(verdict, Judgement::Accept) && proposed(&verdict).is_none() {
            // one more chance before keeping the current parameters
            verdict = advisor.judge(traj, &smoothed, params, &history)?;
            entry["retry_verdict"] = json!(format!("{verdict:?}"));
            if !matches!(verdict, Judgement::Accept) && proposed(&verdict).is_none() {
                log::warn!("advisor gave invalid filter parameters twice; keeping h={}, p={}", params.h, params.p);
                entry["fallback"] = json!("kept current parameters");
                transcript.push(entry);
                break;
            }
        }
        transcript.push(entry);
        match proposed(&verdict) {
            None => break,
            Some(next) => {
                if iter == max_iters.max(1) {
                    break;
                }
                history.push(params);
                params = next;
                smoothed = filter_traj(traj, params)?;
            }
        }
    }
    Ok((smoothed, params, transcript))
}
