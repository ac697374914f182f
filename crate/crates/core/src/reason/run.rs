use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pool::{select_best, should_stop, ExperiencePool, ExperienceRecord, FitSeries, Selector};
use super::proposer::{Proposal, Proposer};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::sindy::{
    estimate_derivatives, fit_equation, DerivMethod, Equation, FitOptions, DEFAULT_ETA, DEFAULT_GAMMA,
    DEFAULT_THRESHOLD,
};
use crate::termlib::{GrammarCaps, TermLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub max_iters: usize,
    /// Receptive field: records shown to the proposer.
    pub m: usize,
    pub r_stop: usize,
    pub eta: f64,
    pub gamma: f64,
    pub threshold: f64,
    pub adaptive_eta: bool,
    pub seed: u64,
    pub caps: GrammarCaps,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            max_iters: 15,
            m: 5,
            r_stop: 3,
            eta: DEFAULT_ETA,
            gamma: DEFAULT_GAMMA,
            threshold: DEFAULT_THRESHOLD,
            adaptive_eta: false,
            seed: 0,
            caps: GrammarCaps::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.m == 0 || self.r_stop == 0 {
            return Err(Error::InvalidArgument("max_iters, m and r_stop must be at least 1".into()));
        }
        if !(self.eta >= 0.0 && self.gamma >= 0.0 && self.threshold >= 0.0) {
            return Err(Error::InvalidArgument("eta, gamma and threshold must be non-negative".into()));
        }
        Ok(())
    }
}

pub struct Assessment {
    /// Fitted equation with metrics filled in.
    pub equation: Equation,
    pub fit: Option<FitSeries>,
}

/// Fits a candidate library and scores it.
pub trait Assessor {
    fn dim(&self) -> usize;

    fn assess(&mut self, library: &TermLibrary, opts: FitOptions) -> Result<Assessment>;
}

/// Sparse regression against fixed states and derivative estimates.
pub struct PixelAssessor {
    states: DMatrix<f64>,
    derivs: DMatrix<f64>,
}

impl PixelAssessor {
    pub fn new(states: DMatrix<f64>, derivs: DMatrix<f64>) -> Result<Self> {
        if states.shape() != derivs.shape() {
            return Err(Error::InvalidArgument("states and derivatives differ in shape".into()));
        }
        Ok(Self { states, derivs })
    }

    pub fn from_trajectory(traj: &Trajectory, method: DerivMethod) -> Result<Self> {
        let d = estimate_derivatives(traj, method)?;
        Self::new(traj.states.clone(), d.values)
    }
}

impl Assessor for PixelAssessor {
    fn dim(&self) -> usize {
        self.states.ncols()
    }

    fn assess(&mut self, library: &TermLibrary, opts: FitOptions) -> Result<Assessment> {
        let equation = fit_equation(library, &self.states, &self.derivs, opts)?;
        let predicted = equation.predict_derivatives(&self.states)?;
        Ok(Assessment {
            equation,
            fit: Some(FitSeries {
                predicted,
                actual: self.derivs.clone(),
            }),
        })
    }
}

/// One line of the discovery transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryStep {
    pub t: usize,
    pub proposed_terms: Vec<String>,
    pub eta: f64,
    /// One row per term, one entry per state variable.
    pub coeffs: Vec<Vec<f64>>,
    pub r2: Option<f64>,
    pub length: Option<usize>,
    pub fitness: Option<f64>,
    pub stop_decision: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<String>,
}

impl DiscoveryStep {
    fn gap(t: usize, proposal: Option<&Proposal>, eta: f64, reason: String) -> Self {
        Self {
            t,
            proposed_terms: proposal.map(|p| p.library.names()).unwrap_or_default(),
            eta,
            coeffs: vec![],
            r2: None,
            length: None,
            fitness: None,
            stop_decision: false,
            gap: Some(reason),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub equation: Equation,
    pub best_iteration: usize,
    pub pool: ExperiencePool,
    pub steps: Vec<DiscoveryStep>,
    /// Iteration at which the repetition rule fired.
    pub stopped_at: Option<usize>,
}

impl Discovery {
    pub fn transcript_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("step serializes") + "\n")
            .collect()
    }
}

fn validated(p: Proposal, dim: usize, caps: GrammarCaps) -> Result<Proposal> {
    let library = TermLibrary::with_caps(p.library.terms().to_vec(), dim, caps)?;
    if library.dim() != dim || p.library.dim() != dim {
        return Err(Error::InvalidArgument(format!("library is not over {dim} variables")));
    }
    Ok(Proposal { library, eta: p.eta })
}

/// Propose, assess, record and check for repetition, up to `max_iters`
/// times; then select from the pool.
pub fn run_discovery(
    assessor: &mut dyn Assessor,
    proposer: &mut dyn Proposer,
    selector: &mut dyn Selector,
    config: &DiscoveryConfig,
) -> Result<Discovery> {
    config.validate()?;
    let dim = assessor.dim();
    let mut pool = ExperiencePool::new();
    let mut steps = Vec::new();
    let mut stopped_at = None;
    for t in 1..=config.max_iters {
        let mut proposal = None;
        let mut failure = String::new();
        let mut exhausted = false;
        for attempt in 0..2 {
            match proposer
                .propose(pool.recent(config.m), dim, config.caps)
                .and_then(|p| p.map(|p| validated(p, dim, config.caps)).transpose())
            {
                Ok(Some(p)) => {
                    proposal = Some(p);
                    break;
                }
                Ok(None) => {
                    exhausted = true;
                    break;
                }
                Err(e @ Error::ReplayMismatch { .. }) => return Err(e),
                Err(e) => {
                    log::warn!("iteration {t}: proposal attempt {} rejected: {e}", attempt + 1);
                    failure = e.to_string();
                }
            }
        }
        if exhausted {
            log::info!("{} proposer exhausted after {} iterations", proposer.name(), t - 1);
            break;
        }
        let Some(proposal) = proposal else {
            steps.push(DiscoveryStep::gap(t, None, config.eta, failure));
            continue;
        };
        let eta = match (config.adaptive_eta, proposal.eta) {
            (true, Some(e)) => e,
            _ => config.eta,
        };
        let opts = FitOptions {
            eta,
            threshold: config.threshold,
            gamma: config.gamma,
        };
        let assessment = match assessor.assess(&proposal.library, opts) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("iteration {t}: assessment failed: {e}");
                proposer.rejected(&proposal.library, &e);
                steps.push(DiscoveryStep::gap(t, Some(&proposal), eta, e.to_string()));
                continue;
            }
        };
        let equation = assessment.equation;
        let metrics = equation
            .metrics
            .ok_or_else(|| Error::InvalidArgument("assessor returned an unscored equation".into()))?;
        let signature = proposal.library.signature();
        let values = &equation.coeffs.values;
        let coeffs = (0..values.nrows())
            .map(|i| values.row(i).iter().copied().collect())
            .collect();
        pool.push(ExperienceRecord {
            iteration: t,
            signature: signature.clone(),
            equation,
            r2: metrics.r2,
            length: metrics.length,
            fitness: metrics.fitness,
            eta,
            fit: assessment.fit.map(Arc::new),
        });
        let stop = should_stop(&pool, &signature, config.r_stop);
        log::debug!(
            "iteration {t}: {} terms, r2 {:.4}, length {}, fitness {:.4}",
            proposal.library.len(),
            metrics.r2,
            metrics.length,
            metrics.fitness
        );
        steps.push(DiscoveryStep {
            t,
            proposed_terms: proposal.library.names(),
            eta,
            coeffs,
            r2: Some(metrics.r2),
            length: Some(metrics.length),
            fitness: Some(metrics.fitness),
            stop_decision: stop,
            gap: None,
        });
        if stop {
            stopped_at = Some(t);
            break;
        }
    }
    let best = select_best(&pool, selector)?.ok_or(Error::DiscoveryFailed)?;
    Ok(Discovery {
        equation: best.equation.clone(),
        best_iteration: best.iteration,
        stopped_at,
        steps,
        pool,
    })
}
