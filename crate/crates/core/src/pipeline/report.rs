use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{neg_inf, neg_inf_map};
use crate::dynamics::SystemSpec;
use crate::error::Result;
use crate::sindy::Equation;
use crate::smoothing::FilterParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Result of one (noise level, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub seed: u64,
    pub noise: f64,
    pub equation: Equation,
    /// Absent when the system has no ground-truth term set.
    pub terms_found: Option<bool>,
    pub false_positives: Option<usize>,
    /// R² of the selected equation on the derivative data it was fitted to.
    pub r2_fit: f64,
    #[serde(with = "neg_inf_map")]
    pub r2_at: BTreeMap<usize, f64>,
    pub diverged: bool,
    pub best_iteration: usize,
    pub iterations: usize,
    pub stopped_at: Option<usize>,
    pub filter: Option<FilterParams>,
    pub latent_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub seed: u64,
    pub noise: f64,
    pub stage: String,
    pub error: String,
}

/// Mean and sample standard deviation (`n - 1` denominator; absent for a
/// single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(with = "neg_inf")]
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1 && mean.is_finite())
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Stat { mean, std })
    }
}

/// Per-noise-level summary over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub noise: f64,
    pub runs: usize,
    pub failures: usize,
    /// Fraction of runs recovering every true term.
    pub terms_found_rate: Option<f64>,
    pub false_positives: Option<Stat>,
    pub r2_fit: Stat,
    pub r2_at: BTreeMap<usize, Stat>,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub entries: Vec<EvalEntry>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<StageFailure>,
    /// Caveats about the system definition.
    #[serde(default)]
    pub notes: Vec<String>,
    /// Wall-clock seconds.
    pub runtime: f64,
}

pub fn aggregate(noise: &[f64], entries: &[EvalEntry], failures: &[StageFailure]) -> Vec<Aggregate> {
    noise
        .iter()
        .filter_map(|&sigma| {
            let runs: Vec<&EvalEntry> = entries.iter().filter(|e| e.noise == sigma).collect();
            let r2_fit = Stat::of(&runs.iter().map(|e| e.r2_fit).collect::<Vec<_>>())?;
            let found: Vec<bool> = runs.iter().filter_map(|e| e.terms_found).collect();
            let fps: Vec<f64> = runs.iter().filter_map(|e| e.false_positives.map(|f| f as f64)).collect();
            let mut horizons: Vec<usize> = runs.iter().flat_map(|e| e.r2_at.keys().copied()).collect();
            horizons.sort_unstable();
            horizons.dedup();
            let r2_at = horizons
                .into_iter()
                .filter_map(|n| {
                    let v: Vec<f64> = runs.iter().filter_map(|e| e.r2_at.get(&n).copied()).collect();
                    Stat::of(&v).map(|s| (n, s))
                })
                .collect();
            Some(Aggregate {
                noise: sigma,
                runs: runs.len(),
                failures: failures.iter().filter(|f| f.noise == sigma).count(),
                terms_found_rate: (!found.is_empty())
                    .then(|| found.iter().filter(|b| **b).count() as f64 / found.len() as f64),
                false_positives: Stat::of(&fps),
                r2_fit,
                r2_at,
                diverged: runs.iter().filter(|e| e.diverged).count(),
            })
        })
        .collect()
}

fn stat_text(s: &Stat) -> String {
    match s.std {
        Some(sd) => format!("{:.4} ± {:.4}", s.mean, sd),
        None => format!("{:.4}", s.mean),
    }
}

impl EvalReport {
    pub fn new(config: RunConfig, entries: Vec<EvalEntry>, failures: Vec<StageFailure>, runtime: f64) -> Self {
        let aggregates = aggregate(&config.noise, &entries, &failures);
        let notes = SystemSpec::new(config.system)
            .canonical_form_note()
            .map(|n| format!("{}: {n}", config.system))
            .into_iter()
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            config,
            entries,
            aggregates,
            failures,
            notes,
            runtime,
        }
    }

    /// Zero iff no stage failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// JSON with the runtime zeroed, for comparing runs.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.runtime = 0.0;
        copy.to_json()
    }

    /// Plain-text digest; every figure is a rounded field of the report.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "system {} ({} mode), {} seeds", c.system, c.mode, c.seeds.len());
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        for a in &self.aggregates {
            let _ = writeln!(s, "noise {}: {} runs, {} failures", a.noise, a.runs, a.failures);
            if let Some(rate) = a.terms_found_rate {
                let _ = writeln!(s, "  terms found rate {rate:.4}");
            }
            if let Some(fp) = &a.false_positives {
                let _ = writeln!(s, "  false positives {}", stat_text(fp));
            }
            let _ = writeln!(s, "  r2 fit {}", stat_text(&a.r2_fit));
            for (n, st) in &a.r2_at {
                let _ = writeln!(s, "  r2@{n} {}", stat_text(st));
            }
            if a.diverged > 0 {
                let _ = writeln!(s, "  diverged {}", a.diverged);
            }
        }
        for f in &self.failures {
            let _ = writeln!(s, "failure seed {} noise {} at {}: {}", f.seed, f.noise, f.stage, f.error);
        }
        let _ = writeln!(s, "runtime {:.2} s", self.runtime);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemName;
    use proptest::prelude::*;

    fn entry(seed: u64, noise: f64, r2: f64, fp: usize) -> EvalEntry {
        EvalEntry {
            seed,
            noise,
            equation: Equation::from_terms(&[("z1", vec![0.0, 1.0]), ("z2", vec![-1.0, 0.0])], 2).unwrap(),
            terms_found: Some(fp == 0),
            false_positives: Some(fp),
            r2_fit: r2,
            r2_at: [(100, r2), (1000, r2 - 0.1)].into_iter().collect(),
            diverged: false,
            best_iteration: 1,
            iterations: 3,
            stopped_at: Some(3),
            filter: None,
            latent_dim: None,
        }
    }

    proptest! {
        #[test]
        fn stat_matches_welford_oracle(values in prop::collection::vec(-1e3f64..1e3, 2..20)) {
            let s = Stat::of(&values).unwrap();
            // Welford update as an independent recomputation
            let (mut mean, mut m2) = (0.0, 0.0);
            for (k, v) in values.iter().enumerate() {
                let delta = v - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (v - mean);
            }
            let sd = (m2 / (values.len() - 1) as f64).sqrt();
            prop_assert!((s.mean - mean).abs() <= 1e-11 * (1.0 + mean.abs()));
            prop_assert!((s.std.unwrap() - sd).abs() <= 1e-9 * (1.0 + sd));
        }
    }

    #[test]
    fn aggregates_group_by_noise() {
        let entries = vec![entry(0, 0.0, 0.9, 0), entry(1, 0.0, 0.7, 2), entry(0, 0.1, 0.5, 1)];
        let failures = vec![StageFailure {
            seed: 1,
            noise: 0.1,
            stage: "detect".into(),
            error: "x".into(),
        }];
        let mut cfg = RunConfig::new(SystemName::Linear);
        cfg.noise = vec![0.0, 0.1];
        let r = EvalReport::new(cfg, entries, failures, 1.5);
        assert_eq!(r.aggregates.len(), 2);
        let a = &r.aggregates[0];
        assert_eq!(a.runs, 2);
        assert!((a.r2_fit.mean - 0.8).abs() < 1e-12);
        assert!((a.r2_fit.std.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(a.terms_found_rate, Some(0.5));
        assert_eq!(r.aggregates[1].failures, 1);
        assert_eq!(r.aggregates[1].r2_fit.std, None);
        assert_eq!(r.exit_code(), 1);
    }

    #[test]
    fn json_round_trip_and_canonical_form() {
        let mut e = entry(0, 0.0, 0.9, 0);
        e.r2_at.insert(1000, f64::NEG_INFINITY);
        e.diverged = true;
        let r = EvalReport::new(RunConfig::new(SystemName::Linear), vec![e], vec![], 2.0);
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let mut other = r.clone();
        other.runtime = 9.0;
        assert_eq!(other.canonical_json().unwrap(), r.canonical_json().unwrap());
        assert_eq!(r.exit_code(), 0);
        assert!(r.summary().contains("diverged 1"));
        assert!(r.summary().contains("note: Linear: canonical form"));
    }
}
