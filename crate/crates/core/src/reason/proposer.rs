use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pool::{default_best, format_experience_prompt, ExperienceRecord};
use super::run::DiscoveryStep;
use crate::error::{Error, Result};
use crate::llm::{extract_delimited, Advisor};
use crate::termlib::{parse_term_with_caps, random_term, GrammarCaps, Term, TermLibrary};

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub library: TermLibrary,
    /// Sparsity weight suggestion, used only when adaptive eta is on.
    pub eta: Option<f64>,
}

pub trait Proposer {
    /// Next library given the most recent records (oldest first).
    /// `Ok(None)` means the proposer has nothing more to offer.
    fn propose(&mut self, recent: &[ExperienceRecord], dim: usize, caps: GrammarCaps) -> Result<Option<Proposal>>;

    fn name(&self) -> &'static str;

    /// Called when a proposed library could not be assessed.
    fn rejected(&mut self, _library: &TermLibrary, _error: &Error) {}
}

/// Starting library: every monomial up to degree 2 plus the constant.
pub fn seed_library(dim: usize, caps: GrammarCaps) -> TermLibrary {
    let lib = TermLibrary::polynomial(dim, 2, true);
    if lib.len() <= caps.k_max {
        lib
    } else {
        TermLibrary::polynomial(dim, 1, true)
    }
}

/// Seeded random search: add a random term (0.3), keep the active terms
/// of the best recent library minus its weakest (0.3), or merge the active terms of the two
/// best recent libraries (0.4). When the chosen mutation would leave the
/// best equation unchanged, the others are tried in turn.
pub struct MutationProposer {
    rng: ChaCha8Rng,
    repair: Option<Vec<Term>>,
}

impl MutationProposer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            repair: None,
        }
    }

    fn add(&mut self, base: &TermLibrary, caps: GrammarCaps) -> Option<Vec<Term>> {
        if base.len() >= caps.k_max {
            return None;
        }
        for _ in 0..32 {
            let t = random_term(base.dim(), caps, &mut self.rng);
            if base.index_of(&t).is_none() {
                let mut terms = base.terms().to_vec();
                terms.push(t);
                return Some(terms);
            }
        }
        None
    }

    /// Keeps the active terms of `record` minus the weakest of them.
    fn drop_weakest(record: &ExperienceRecord) -> Option<Vec<Term>> {
        let lib = &record.equation.library;
        let d = record.equation.dim();
        let active: Vec<usize> = (0..lib.len())
            .filter(|&i| (0..d).any(|j| record.equation.is_active(i, j)))
            .collect();
        if active.len() < 2 {
            return None;
        }
        let weakest = active
            .iter()
            .map(|&i| (i, importance(record, i)))
            .fold((0, f64::INFINITY), |acc, (i, w)| if w < acc.1 { (i, w) } else { acc })
            .0;
        Some(
            active
                .into_iter()
                .filter(|&i| i != weakest)
                .map(|i| lib.terms()[i].clone())
                .collect(),
        )
    }

    fn recombine(recent: &[ExperienceRecord]) -> Option<Vec<Term>> {
        let first = default_best(recent)?;
        let rest: Vec<ExperienceRecord> = recent
            .iter()
            .filter(|r| r.signature != first.signature)
            .cloned()
            .collect();
        let second = default_best(&rest)?;
        let mut terms = active_terms(first);
        for t in active_terms(second) {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        (!terms.is_empty()).then_some(terms)
    }
}

/// Largest normalized coefficient magnitude of term `i` across equations.
fn importance(record: &ExperienceRecord, i: usize) -> f64 {
    let c = &record.equation.coeffs;
    let scale = c.scales.get(i).copied().unwrap_or(1.0);
    c.values.row(i).iter().map(|v| (v * scale).abs()).fold(0.0, f64::max)
}

fn active_terms(record: &ExperienceRecord) -> Vec<Term> {
    let lib = &record.equation.library;
    let d = record.equation.dim();
    (0..lib.len())
        .filter(|&i| (0..d).any(|j| record.equation.is_active(i, j)))
        .map(|i| lib.terms()[i].clone())
        .collect()
}

impl Proposer for MutationProposer {
    fn propose(&mut self, recent: &[ExperienceRecord], dim: usize, caps: GrammarCaps) -> Result<Option<Proposal>> {
        if let Some(terms) = self.repair.take() {
            return Ok(Some(Proposal {
                library: TermLibrary::with_caps(terms, dim, caps)?,
                eta: default_best(recent).map(|b| b.eta),
            }));
        }
        let Some(best) = default_best(recent) else {
            return Ok(Some(Proposal {
                library: seed_library(dim, caps),
                eta: None,
            }));
        };
        let roll: f64 = self.rng.gen();
        let order: [u8; 3] = if roll < 0.3 {
            [0, 1, 2]
        } else if roll < 0.6 {
            [1, 0, 2]
        } else {
            [2, 0, 1]
        };
        // skip mutations that leave the best equation unchanged
        let unchanged = [
            best.signature.clone(),
            TermLibrary::with_caps(active_terms(best), dim, caps)
                .map(|l| l.signature())
                .unwrap_or_default(),
        ];
        let mut fallback = None;
        let mut chosen = None;
        for op in order {
            let terms = match op {
                0 => self.add(&best.equation.library, caps),
                1 => Self::drop_weakest(best),
                _ => Self::recombine(recent),
            };
            let Some(terms) = terms else { continue };
            let library = TermLibrary::with_caps(terms, dim, caps)?;
            if !unchanged.contains(&library.signature()) {
                chosen = Some(library);
                break;
            }
            fallback.get_or_insert(library);
        }
        let library = chosen.or(fallback).unwrap_or_else(|| seed_library(dim, caps));
        let factor = [0.5, 1.0, 2.0][self.rng.gen_range(0..3)];
        let eta = (best.eta * factor).clamp(1e-4, 1.0);
        Ok(Some(Proposal {
            library,
            eta: Some(eta),
        }))
    }

    fn name(&self) -> &'static str {
        "mutation"
    }

    /// Retries without the last term implicated by the failure.
    fn rejected(&mut self, library: &TermLibrary, error: &Error) {
        let named: Vec<String> = match error {
            Error::SingularDesign { terms } => terms.clone(),
            Error::Eval { term, .. } => vec![term.clone()],
            _ => vec![],
        };
        let names = library.names();
        let culprit = (0..names.len()).rev().find(|&i| named.contains(&names[i]));
        self.repair = match culprit {
            Some(i) if library.len() > 1 => {
                let mut terms = library.terms().to_vec();
                terms.remove(i);
                Some(terms)
            }
            _ => None,
        };
    }
}

/// Replays the libraries and eta values of a recorded discovery
/// transcript, skipping its gap lines.
pub struct ReplayProposer {
    steps: Vec<DiscoveryStep>,
    cursor: usize,
}

impl ReplayProposer {
    pub fn new(steps: Vec<DiscoveryStep>) -> Self {
        let steps = steps.into_iter().filter(|s| s.gap.is_none()).collect();
        Self { steps, cursor: 0 }
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<DiscoveryStep>>>()?;
        Ok(Self::new(steps))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.cursor
    }
}

impl Proposer for ReplayProposer {
    fn propose(&mut self, _recent: &[ExperienceRecord], dim: usize, caps: GrammarCaps) -> Result<Option<Proposal>> {
        let Some(step) = self.steps.get(self.cursor) else {
            return Ok(None);
        };
        self.cursor += 1;
        let terms = step
            .proposed_terms
            .iter()
            .map(|s| parse_term_with_caps(s, dim, caps.max_power))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(Proposal {
            library: TermLibrary::with_caps(terms, dim, caps)?,
            eta: Some(step.eta),
        }))
    }

    fn name(&self) -> &'static str {
        "replay"
    }
}

/// Proposes fixed library texts in order; optionally repeats the last
/// one forever.
pub struct ScriptedProposer {
    items: Vec<String>,
    cursor: usize,
    repeat_last: bool,
}

impl ScriptedProposer {
    pub fn new(items: Vec<String>) -> Self {
        Self {
            items,
            cursor: 0,
            repeat_last: false,
        }
    }

    pub fn repeating(text: &str) -> Self {
        Self {
            items: vec![text.to_string()],
            cursor: 0,
            repeat_last: true,
        }
    }
}

impl Proposer for ScriptedProposer {
    fn propose(&mut self, _recent: &[ExperienceRecord], dim: usize, caps: GrammarCaps) -> Result<Option<Proposal>> {
        let idx = if self.cursor < self.items.len() {
            self.cursor
        } else if self.repeat_last && !self.items.is_empty() {
            self.items.len() - 1
        } else {
            return Ok(None);
        };
        self.cursor += 1;
        Ok(Some(Proposal {
            library: TermLibrary::parse_list(&self.items[idx], dim, caps)?,
            eta: None,
        }))
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

/// Asks the advisor for the next library from the rendered experience.
pub struct AdvisorProposer {
    advisor: Arc<Advisor>,
    ask_eta: bool,
    last_failure: Option<String>,
}

impl AdvisorProposer {
    pub fn new(advisor: Arc<Advisor>) -> Self {
        Self {
            advisor,
            ask_eta: false,
            last_failure: None,
        }
    }

    /// Also invites an `<eta>` suggestion.
    pub fn with_eta(mut self) -> Self {
        self.ask_eta = true;
        self
    }
}

pub(crate) fn parse_proposal(reply: &str, dim: usize, caps: GrammarCaps) -> Result<Proposal> {
    let blocks = extract_delimited(reply, "<library>", "</library>")?;
    let Some(text) = blocks.first() else {
        return Err(Error::Parse {
            offset: 0,
            message: "reply has no <library> block".into(),
        });
    };
    let library = TermLibrary::parse_list(text, dim, caps)?;
    let eta = extract_delimited(reply, "<eta>", "</eta>")
        .ok()
        .and_then(|b| b.first().and_then(|s| s.trim().parse::<f64>().ok()))
        .filter(|v| v.is_finite() && *v > 0.0);
    Ok(Proposal { library, eta })
}

impl Proposer for AdvisorProposer {
    fn propose(&mut self, recent: &[ExperienceRecord], dim: usize, caps: GrammarCaps) -> Result<Option<Proposal>> {
        let (mut experience, plots) = format_experience_prompt(recent, recent.len().max(1));
        if let Some(note) = self.last_failure.take() {
            experience.push_str(&format!("The previous proposal could not be fitted: {note}\n"));
        }
        let variables: Vec<String> = (1..=dim).map(|i| format!("z{i}")).collect();
        let eta_hint = if self.ask_eta {
            " You may also suggest a sparsity weight as <eta>value</eta>."
        } else {
            ""
        };
        let reply = self.advisor.ask(
            "propose_library",
            &[
                ("variables", variables.join(", ")),
                ("max_power", caps.max_power.to_string()),
                ("k_max", caps.k_max.to_string()),
                ("experience", experience),
                ("eta_hint", eta_hint.to_string()),
            ],
            plots,
        )?;
        parse_proposal(&reply, dim, caps).map(Some)
    }

    fn name(&self) -> &'static str {
        "advisor"
    }

    fn rejected(&mut self, library: &TermLibrary, error: &Error) {
        self.last_failure = Some(format!("[{library}] {error}"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sindy::Equation;

    #[test]
    fn reply_parsing() {
        let caps = GrammarCaps::default();
        let p = parse_proposal("ok <library>z1, z2, z1*z2</library> <eta>0.02</eta>", 2, caps).unwrap();
        assert_eq!(p.library.names(), vec!["z1", "z2", "z1*z2"]);
        assert_eq!(p.eta, Some(0.02));
        assert!(parse_proposal("no tags", 2, caps).is_err());
        assert!(parse_proposal("<library>z3</library>", 2, caps).is_err());
        assert!(parse_proposal("<library>z1^9</library>", 2, caps).is_err());
        let p = parse_proposal("<library>z1</library><eta>-1</eta>", 2, caps).unwrap();
        assert_eq!(p.eta, None);
    }

    #[test]
    fn scripted_exhausts_or_repeats() {
        let caps = GrammarCaps::default();
        let mut s = ScriptedProposer::new(vec!["z1".into()]);
        assert!(s.propose(&[], 2, caps).unwrap().is_some());
        assert!(s.propose(&[], 2, caps).unwrap().is_none());
        let mut r = ScriptedProposer::repeating("z1, z2");
        for _ in 0..5 {
            assert_eq!(r.propose(&[], 2, caps).unwrap().unwrap().library.len(), 2);
        }
    }

    #[test]
    fn mutation_starts_from_quadratic() {
        let mut m = MutationProposer::new(1);
        let p = m.propose(&[], 2, GrammarCaps::default()).unwrap().unwrap();
        assert_eq!(p.library.len(), 6);
        let p3 = m.propose(&[], 6, GrammarCaps::default()).unwrap().unwrap();
        assert!(p3.library.len() <= 25);
    }

    #[test]
    fn mutation_never_resubmits_the_best_equation() {
        let eq = Equation::from_terms(
            &[("1", vec![0.5, 0.0]), ("z1", vec![0.0, 1.0]), ("z2", vec![-1.0, 0.0]), ("z1*z2", vec![0.0, 0.0])],
            2,
        )
        .unwrap();
        let best = ExperienceRecord {
            iteration: 1,
            signature: eq.library.signature(),
            equation: eq,
            r2: 0.99,
            length: 3,
            fitness: 0.93,
            eta: 0.01,
            fit: None,
        };
        let pruned = TermLibrary::from_strs(&["1", "z1", "z2"], 2).unwrap().signature();
        for seed in 0..50 {
            let mut m = MutationProposer::new(seed);
            let p = m.propose(std::slice::from_ref(&best), 2, GrammarCaps::default()).unwrap().unwrap();
            let sig = p.library.signature();
            assert!(sig != best.signature && sig != pruned, "seed {seed}: {sig}");
        }
    }
}
