use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::autoencoder::{train_autoencoder, variance_explained, Autoencoder, TrainHyper};
use crate::error::{Error, Result};
use crate::llm::{extract_delimited, Advisor, ChatImage};
use crate::plot::hstack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionTrialRecord {
    pub d: usize,
    /// Held-out mean squared error per pixel.
    pub recon_error: f64,
    /// Latent covariance eigenvalue shares, largest first.
    pub ratios: Vec<f64>,
    pub stalled: bool,
    /// Original and reconstructed sample frame side by side.
    #[serde(skip)]
    pub sample: Option<RgbImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionDecision {
    Try(usize),
    Stop(usize),
}

/// What the advisor sees besides the trial log.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchContext {
    pub range: RangeInclusive<usize>,
    /// Mean per-pixel variance of the data, in the units of `recon_error`.
    pub data_variance: f64,
}

pub trait DimensionAdvisor {
    fn decide(&mut self, log: &[DimensionTrialRecord], ctx: &SearchContext) -> Result<DimensionDecision>;
}

/// Smallest error among trials, preferring smaller `d` within 10%.
fn fallback_choice(log: &[DimensionTrialRecord]) -> Option<usize> {
    let best = log.iter().map(|r| r.recon_error).fold(f64::INFINITY, f64::min);
    let mut ds: Vec<&DimensionTrialRecord> = log.iter().collect();
    ds.sort_by_key(|r| r.d);
    ds.into_iter().find(|r| r.recon_error <= 1.1 * best).map(|r| r.d)
}

/// Elbow rule: settle on the smallest `d` whose error is within `tol` of
/// the error at `d + 1` (errors below `floor` times the data variance
/// count as equal) and whose smallest variance share is at least
/// `min_ratio`. Otherwise tries the next untried `d` upward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElbowAdvisor {
    pub tol: f64,
    pub floor: f64,
    pub min_ratio: f64,
}

impl Default for ElbowAdvisor {
    fn default() -> Self {
        Self {
            tol: 1.1,
            floor: 1e-2,
            min_ratio: 0.02,
        }
    }
}

impl ElbowAdvisor {
    pub fn elbow(&self, log: &[DimensionTrialRecord], data_variance: f64) -> Option<usize> {
        let get = |d: usize| log.iter().find(|r| r.d == d);
        let mut ds: Vec<usize> = log.iter().map(|r| r.d).collect();
        ds.sort_unstable();
        ds.into_iter().find(|&d| {
            let (Some(a), Some(b)) = (get(d), get(d + 1)) else {
                return false;
            };
            let close = a.recon_error <= (self.tol * b.recon_error).max(self.floor * data_variance);
            let spread = a.ratios.iter().copied().fold(f64::INFINITY, f64::min) >= self.min_ratio;
            close && spread
        })
    }
}

impl DimensionAdvisor for ElbowAdvisor {
    fn decide(&mut self, log: &[DimensionTrialRecord], ctx: &SearchContext) -> Result<DimensionDecision> {
        if let Some(d) = self.elbow(log, ctx.data_variance) {
            return Ok(DimensionDecision::Stop(d));
        }
        match ctx.range.clone().find(|d| log.iter().all(|r| r.d != *d)) {
            Some(d) => Ok(DimensionDecision::Try(d)),
            None => Ok(DimensionDecision::Stop(fallback_choice(log).unwrap_or(*ctx.range.start()))),
        }
    }
}

/// Plays back fixed decisions, then stops at the best trial so far.
#[derive(Debug, Clone)]
pub struct ScriptedDimensionAdvisor {
    script: Vec<DimensionDecision>,
    cursor: usize,
}

impl ScriptedDimensionAdvisor {
    pub fn new(script: Vec<DimensionDecision>) -> Self {
        Self { script, cursor: 0 }
    }
}

impl DimensionAdvisor for ScriptedDimensionAdvisor {
    fn decide(&mut self, log: &[DimensionTrialRecord], ctx: &SearchContext) -> Result<DimensionDecision> {
        let next = self.script.get(self.cursor).copied();
        self.cursor += 1;
        Ok(next.unwrap_or_else(|| DimensionDecision::Stop(fallback_choice(log).unwrap_or(*ctx.range.start()))))
    }
}

pub fn format_trials(log: &[DimensionTrialRecord]) -> String {
    if log.is_empty() {
        return "(none)\n".into();
    }
    let mut out = String::new();
    for r in log {
        let ratios: Vec<String> = r.ratios.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(out, "d={}: error {:.3e}, ratios [{}]", r.d, r.recon_error, ratios.join(", "));
    }
    out
}

pub(crate) fn parse_dimension_decision(reply: &str) -> Result<DimensionDecision> {
    let body = extract_delimited(reply, "<decision>", "</decision>")?
        .into_iter()
        .next()
        .unwrap_or_else(|| reply.to_string());
    let lower = body.trim().to_ascii_lowercase();
    let digits: String = lower.chars().filter(char::is_ascii_digit).collect();
    let bad = || Error::Parse {
        offset: 0,
        message: format!("unrecognized dimension decision `{}`", body.trim()),
    };
    let d: usize = digits.parse().map_err(|_| bad())?;
    if lower.starts_with("try") {
        Ok(DimensionDecision::Try(d))
    } else if lower.starts_with("stop") {
        Ok(DimensionDecision::Stop(d))
    } else {
        Err(bad())
    }
}

/// Asks the advisor, showing the trial table and sample reconstructions.
pub struct AdvisorDimensionAdvisor {
    advisor: Arc<Advisor>,
}

impl AdvisorDimensionAdvisor {
    pub fn new(advisor: Arc<Advisor>) -> Self {
        Self { advisor }
    }
}

impl DimensionAdvisor for AdvisorDimensionAdvisor {
    fn decide(&mut self, log: &[DimensionTrialRecord], ctx: &SearchContext) -> Result<DimensionDecision> {
        let images = log.iter().filter_map(|r| r.sample.clone().map(ChatImage::new)).collect();
        let reply = self.advisor.ask(
            "dimension_advice",
            &[
                ("trials", format_trials(log)),
                ("d_min", ctx.range.start().to_string()),
                ("d_max", ctx.range.end().to_string()),
            ],
            images,
        )?;
        match parse_dimension_decision(&reply) {
            Ok(d) => Ok(d),
            Err(e) => {
                log::warn!("unusable dimension advice ({e}); stopping at the best trial");
                Ok(DimensionDecision::Stop(fallback_choice(log).unwrap_or(*ctx.range.start())))
            }
        }
    }
}

/// Frame geometry for rendering sample reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

fn grey_panel(values: &[f64], shape: FrameShape, lo: f64, hi: f64) -> RgbImage {
    let plane = shape.height * shape.width;
    let span = (hi - lo).max(1e-12);
    let mut img = RgbImage::new((shape.width * shape.channels) as u32, shape.height as u32);
    for c in 0..shape.channels {
        for y in 0..shape.height {
            for x in 0..shape.width {
                let v = ((values[c * plane + y * shape.width + x] - lo) / span * 255.0).clamp(0.0, 255.0) as u8;
                img.put_pixel((c * shape.width + x) as u32, y as u32, Rgb([v, v, v]));
            }
        }
    }
    img
}

fn sample_image(model: &Autoencoder, x: &DMatrix<f64>, shape: FrameShape) -> Option<RgbImage> {
    if shape.channels * shape.height * shape.width != x.ncols() || x.nrows() == 0 {
        return None;
    }
    let row = x.rows(x.nrows() - 1, 1).into_owned();
    let rec = model.reconstruct(&row);
    let (lo, hi) = (row.min(), row.max());
    let a = grey_panel(row.as_slice(), shape, lo, hi);
    let b = grey_panel(rec.as_slice(), shape, lo, hi);
    let scale = (128 / shape.height.max(1)).max(1) as u32;
    let joined = hstack(&[a, b]);
    Some(image::imageops::resize(
        &joined,
        joined.width() * scale,
        joined.height() * scale,
        image::imageops::FilterType::Nearest,
    ))
}

pub struct DimensionSearch {
    pub d: usize,
    pub model: Autoencoder,
    pub log: Vec<DimensionTrialRecord>,
}

/// Trains bottlenecks chosen by the advisor until it settles or the trial
/// budget runs out, then returns its final choice and that model.
pub fn dimension_search(
    x: &DMatrix<f64>,
    shape: Option<FrameShape>,
    advisor: &mut dyn DimensionAdvisor,
    range: RangeInclusive<usize>,
    max_trials: usize,
    hyper: &TrainHyper,
) -> Result<DimensionSearch> {
    if range.is_empty() || *range.start() == 0 {
        return Err(Error::InvalidArgument("dimension range must be non-empty and start at 1 or more".into()));
    }
    let n = x.nrows().max(1) as f64;
    let data_variance = x
        .column_iter()
        .map(|c| {
            let m = c.sum() / n;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / x.ncols().max(1) as f64;
    let ctx = SearchContext {
        range: range.clone(),
        data_variance,
    };
    let clamp = |d: usize| {
        let c = d.clamp(*range.start(), *range.end());
        if c != d {
            log::warn!("advisor chose d = {d} outside {range:?}; using {c}");
        }
        c
    };
    let mut log: Vec<DimensionTrialRecord> = Vec::new();
    let mut models: Vec<(usize, Autoencoder)> = Vec::new();
    let train = |d: usize, log: &mut Vec<DimensionTrialRecord>, models: &mut Vec<(usize, Autoencoder)>| -> Result<()> {
        let (model, report) = train_autoencoder(x, d, hyper)?;
        let ratios = variance_explained(&model.encode(x))?;
        log::info!("bottleneck {d}: held-out error {:.3e}, ratios {ratios:.3?}", report.recon_error);
        log.push(DimensionTrialRecord {
            d,
            recon_error: report.recon_error,
            ratios,
            stalled: report.stalled,
            sample: shape.and_then(|s| sample_image(&model, x, s)),
        });
        models.push((d, model));
        Ok(())
    };
    let chosen = loop {
        let decision = advisor.decide(&log, &ctx)?;
        match decision {
            DimensionDecision::Stop(d) => break clamp(d),
            DimensionDecision::Try(d) => {
                let d = clamp(d);
                if log.iter().any(|r| r.d == d) {
                    log::warn!("advisor asked to retrain d = {d}; settling on it");
                    break d;
                }
                if log.len() >= max_trials {
                    let d = fallback_choice(&log).unwrap_or(d);
                    log::warn!("trial budget of {max_trials} spent; settling on d = {d}");
                    break d;
                }
                train(d, &mut log, &mut models)?;
            }
        }
    };
    if !models.iter().any(|(d, _)| *d == chosen) {
        train(chosen, &mut log, &mut models)?;
    }
    let model = models
        .into_iter()
        .find(|(d, _)| *d == chosen)
        .map(|(_, m)| m)
        .expect("chosen model trained");
    Ok(DimensionSearch { d: chosen, model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: usize, err: f64, ratios: Vec<f64>) -> DimensionTrialRecord {
        DimensionTrialRecord {
            d,
            recon_error: err,
            ratios,
            stalled: false,
            sample: None,
        }
    }

    #[test]
    fn elbow_rule() {
        let ctx = SearchContext {
            range: 1..=6,
            data_variance: 1.0,
        };
        let mut e = ElbowAdvisor::default();
        assert_eq!(e.decide(&[], &ctx).unwrap(), DimensionDecision::Try(1));
        let mut log = vec![rec(1, 0.3, vec![1.0]), rec(2, 0.01, vec![0.6, 0.4])];
        assert_eq!(e.decide(&log, &ctx).unwrap(), DimensionDecision::Try(3));
        log.push(rec(3, 0.0095, vec![0.6, 0.39, 0.01]));
        assert_eq!(e.decide(&log, &ctx).unwrap(), DimensionDecision::Stop(2));
        // a degenerate second latent disqualifies d = 2
        log[1].ratios = vec![0.99, 0.01];
        assert_eq!(e.decide(&log, &ctx).unwrap(), DimensionDecision::Try(4));
        // errors under the floor count as equal
        let tiny = vec![rec(1, 0.3, vec![1.0]), rec(2, 2e-4, vec![0.5, 0.5]), rec(3, 1e-5, vec![0.5, 0.3, 0.2])];
        assert_eq!(e.decide(&tiny, &ctx).unwrap(), DimensionDecision::Stop(2));
    }

    #[test]
    fn decision_parsing() {
        assert_eq!(parse_dimension_decision("<decision>try 3</decision>").unwrap(), DimensionDecision::Try(3));
        assert_eq!(parse_dimension_decision("<decision> Stop 2 </decision>").unwrap(), DimensionDecision::Stop(2));
        assert!(parse_dimension_decision("<decision>maybe</decision>").is_err());
        assert!(parse_dimension_decision("<decision>try</decision>").is_err());
    }

    #[test]
    fn trial_text_lists_every_trial() {
        let t = format_trials(&[rec(1, 0.5, vec![1.0]), rec(2, 0.25, vec![0.75, 0.25])]);
        assert!(t.contains("d=1: error 5.000e-1, ratios [1.0000]"));
        assert!(t.contains("d=2"));
    }
}
