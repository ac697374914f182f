use std::fmt::Write as _;
use std::sync::Arc;

use image::RgbImage;
use nalgebra::DMatrix;

use crate::error::Result;
use crate::llm::{Advisor, ChatImage};
use crate::plot::{hstack, line_chart, Series, BLUE, GREY};
use crate::sindy::Equation;

/// Fitted and observed derivatives behind one record, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSeries {
    pub predicted: DMatrix<f64>,
    pub actual: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceRecord {
    pub iteration: usize,
    pub signature: String,
    pub equation: Equation,
    pub r2: f64,
    pub length: usize,
    pub fitness: f64,
    pub eta: f64,
    pub fit: Option<Arc<FitSeries>>,
}

impl ExperienceRecord {
    pub fn terms(&self) -> Vec<String> {
        self.equation.library.names()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperiencePool {
    records: Vec<ExperienceRecord>,
}

impl ExperiencePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; iterations must strictly increase.
    pub fn push(&mut self, record: ExperienceRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.iteration > last.iteration, "iterations must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[ExperienceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The last `m` records, oldest first.
    pub fn recent(&self, m: usize) -> &[ExperienceRecord] {
        &self.records[self.records.len().saturating_sub(m)..]
    }

    pub fn count(&self, signature: &str) -> usize {
        self.records.iter().filter(|r| r.signature == signature).count()
    }

    pub fn get(&self, iteration: usize) -> Option<&ExperienceRecord> {
        self.records.iter().find(|r| r.iteration == iteration)
    }
}

pub fn should_stop(pool: &ExperiencePool, candidate_signature: &str, r_stop: usize) -> bool {
    pool.count(candidate_signature) >= r_stop.max(1)
}

/// Higher fitness, then shorter, then earlier.
fn better(a: &ExperienceRecord, b: &ExperienceRecord) -> bool {
    a.fitness > b.fitness
        || (a.fitness == b.fitness && (a.length < b.length || (a.length == b.length && a.iteration < b.iteration)))
}

pub(crate) fn default_best(records: &[ExperienceRecord]) -> Option<&ExperienceRecord> {
    records.iter().fold(None, |best, r| match best {
        Some(b) if !better(r, b) => Some(b),
        _ => Some(r),
    })
}

pub trait Selector {
    /// Iteration number of the chosen record, or `None` to defer to the
    /// default rule.
    fn pick(&mut self, pool: &ExperiencePool) -> Result<Option<usize>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultSelector;

impl Selector for DefaultSelector {
    fn pick(&mut self, _pool: &ExperiencePool) -> Result<Option<usize>> {
        Ok(None)
    }
}

/// Picks the record named by the selector when it is in the pool, the
/// default rule's choice otherwise. Returns `None` only for an empty pool.
pub fn select_best<'a>(pool: &'a ExperiencePool, selector: &mut dyn Selector) -> Result<Option<&'a ExperienceRecord>> {
    if pool.is_empty() {
        return Ok(None);
    }
    if let Some(it) = selector.pick(pool)? {
        match pool.get(it) {
            Some(r) => return Ok(Some(r)),
            None => log::warn!("selector chose iteration {it}, which is not in the pool; using the default rule"),
        }
    }
    Ok(default_best(pool.records()))
}

/// Asks the advisor to choose among all pool records.
pub struct AdvisorSelector {
    advisor: Arc<Advisor>,
}

impl AdvisorSelector {
    pub fn new(advisor: Arc<Advisor>) -> Self {
        Self { advisor }
    }
}

impl Selector for AdvisorSelector {
    fn pick(&mut self, pool: &ExperiencePool) -> Result<Option<usize>> {
        let (text, _) = format_experience_prompt(pool.records(), pool.len().max(1));
        let reply = self.advisor.ask("select_equation", &[("experience", text)], vec![])?;
        let decision = crate::llm::extract_delimited(&reply, "<decision>", "</decision>")
            .ok()
            .and_then(|d| d.first().cloned())
            .unwrap_or_default();
        let digits: String = decision.chars().filter(char::is_ascii_digit).collect();
        Ok(digits.parse().ok())
    }
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

/// Text table of the last `m` records plus one fitted-vs-observed
/// derivative plot per record that carries fit data.
pub fn format_experience_prompt(records: &[ExperienceRecord], m: usize) -> (String, Vec<ChatImage>) {
    let recent = &records[records.len().saturating_sub(m.max(1))..];
    let mut out = String::new();
    let mut plots = Vec::new();
    if recent.is_empty() {
        out.push_str("(no experiments yet)\n");
    }
    for r in recent {
        let _ = writeln!(
            out,
            "iteration {} | eta {} | r2 {:.6} | length {} | fitness {:.6}",
            r.iteration,
            sci(r.eta),
            r.r2,
            r.length,
            r.fitness
        );
        let _ = writeln!(out, "  terms: {}", r.terms().join(", "));
        let values = &r.equation.coeffs.values;
        for j in 0..values.ncols() {
            let coefs: Vec<String> = (0..values.nrows()).map(|i| sci(values[(i, j)])).collect();
            let _ = writeln!(out, "  dz{}/dt: {}", j + 1, coefs.join(", "));
        }
        if let Some(fit) = &r.fit {
            plots.push(ChatImage::new(fit_plot(fit)));
        }
    }
    (out, plots)
}

fn fit_plot(fit: &FitSeries) -> RgbImage {
    let t: Vec<f64> = (0..fit.actual.nrows()).map(|i| i as f64).collect();
    let panels: Vec<RgbImage> = (0..fit.actual.ncols())
        .map(|j| {
            let a: Vec<f64> = fit.actual.column(j).iter().copied().collect();
            let p: Vec<f64> = fit.predicted.column(j).iter().copied().collect();
            line_chart(
                320,
                200,
                &[
                    Series { x: &t, y: &a, color: GREY, dots: false },
                    Series { x: &t, y: &p, color: BLUE, dots: false },
                ],
            )
        })
        .collect();
    hstack(&panels)
}
