use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_ode, SystemSpec};
use crate::error::{Error, Result};
use crate::sindy::{predict_trajectory, r_squared, Equation};
use crate::termlib::Term;

/// Horizons scored by default.
pub const HORIZONS: [usize; 2] = [100, 1000];

/// Comparison of a discovered equation against a system's true form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationScore {
    pub terms_found: bool,
    pub false_positives: usize,
    /// R² of an `n`-step prediction; negative infinity when it blew up.
    #[serde(with = "neg_inf_map")]
    pub r2_at: BTreeMap<usize, f64>,
    pub diverged: bool,
}

/// Truth entries as `(term, state column)` pairs with nonzero coefficient.
fn truth_entries(spec: &SystemSpec) -> Result<Vec<(Term, usize)>> {
    let truth = spec
        .truth_terms()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no ground-truth term set", spec.name)))?;
    let mut out = Vec::new();
    for (name, coefs) in truth {
        let term = Term::parse(name, spec.dim)?;
        for (col, c) in coefs.iter().enumerate() {
            if *c != 0.0 {
                out.push((term.clone(), col));
            }
        }
    }
    Ok(out)
}

pub fn evaluate_equation(eq: &Equation, truth: &SystemSpec, z0: &[f64], dt: f64) -> Result<EquationScore> {
    evaluate_at(eq, truth, z0, dt, &HORIZONS)
}

pub fn evaluate_at(eq: &Equation, truth: &SystemSpec, z0: &[f64], dt: f64, horizons: &[usize]) -> Result<EquationScore> {
    if eq.dim() != truth.dim {
        return Err(Error::InvalidArgument(format!(
            "equation has {} variables, {} has {}",
            eq.dim(),
            truth.name,
            truth.dim
        )));
    }
    let entries = truth_entries(truth)?;
    let terms_found = entries.iter().all(|(t, col)| match eq.library.index_of(t) {
        Some(i) => eq.is_active(i, *col),
        None => false,
    });
    let mut false_positives = 0;
    for (i, t) in eq.library.terms().iter().enumerate() {
        for col in 0..eq.dim() {
            if eq.is_active(i, col) && !entries.iter().any(|(tt, c)| tt == t && *c == col) {
                false_positives += 1;
            }
        }
    }
    let mut r2_at = BTreeMap::new();
    let mut diverged = false;
    for &n in horizons {
        let actual = integrate_ode(truth, z0, dt, n)?;
        let score = match predict_trajectory(eq, z0, dt, n) {
            Ok(pred) => r_squared(&pred.states, &actual.states)?,
            Err(Error::Diverged { step }) => {
                log::warn!("prediction diverged at step {step} of {n}");
                diverged = true;
                f64::NEG_INFINITY
            }
            Err(e) => return Err(e),
        };
        r2_at.insert(n, score);
    }
    Ok(EquationScore {
        terms_found,
        false_positives,
        r2_at,
        diverged,
    })
}

/// Non-finite values are written as `null` and read back as negative
/// infinity.
pub(crate) mod neg_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

pub(crate) mod neg_inf_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<usize, Option<f64>> = m.iter().map(|(k, v)| (*k, v.is_finite().then_some(*v))).collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        let m = BTreeMap::<usize, Option<f64>>::deserialize(d)?;
        Ok(m.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NEG_INFINITY))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemName;

    fn truth_equation(spec: &SystemSpec) -> Equation {
        Equation::from_terms(&spec.truth_terms().unwrap(), spec.dim).unwrap()
    }

    #[test]
    fn truth_scores_perfectly() {
        let spec = SystemSpec::new(SystemName::Linear);
        let s = evaluate_equation(&truth_equation(&spec), &spec, &[2.0, 0.0], 0.05).unwrap();
        assert!(s.terms_found && !s.diverged);
        assert_eq!(s.false_positives, 0);
        assert!((s.r2_at[&1000] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spurious_term_is_counted() {
        let spec = SystemSpec::new(SystemName::Linear);
        let mut entries = spec.truth_terms().unwrap();
        entries.push(("z1^2", vec![0.2, 0.0]));
        let eq = Equation::from_terms(&entries, 2).unwrap();
        let s = evaluate_equation(&eq, &spec, &[2.0, 0.0], 0.05).unwrap();
        assert!(s.terms_found);
        assert_eq!(s.false_positives, 1);
    }

    #[test]
    fn missing_term_and_wrong_column() {
        let spec = SystemSpec::new(SystemName::Circular);
        // z1 placed in dz1 instead of dz2
        let eq = Equation::from_terms(&[("z1", vec![1.0, 0.0]), ("z2", vec![-1.0, 0.0])], 2).unwrap();
        let s = evaluate_equation(&eq, &spec, &[1.0, 0.0], 0.05).unwrap();
        assert!(!s.terms_found);
        assert_eq!(s.false_positives, 1);
    }

    #[test]
    fn divergence_gives_sentinel_and_round_trips() {
        let spec = SystemSpec::new(SystemName::Linear);
        let eq = Equation::from_terms(&[("z1^2", vec![5.0, 0.0]), ("z2", vec![0.0, 1.0])], 2).unwrap();
        let s = evaluate_equation(&eq, &spec, &[2.0, 0.0], 0.05).unwrap();
        assert!(s.diverged);
        assert_eq!(s.r2_at[&1000], f64::NEG_INFINITY);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("null"));
        let back: EquationScore = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn pde_has_no_truth() {
        let spec = SystemSpec::new(SystemName::Lo);
        let eq = Equation::from_terms(&[("z1", vec![1.0, 0.0])], 2).unwrap();
        assert!(evaluate_equation(&eq, &spec, &[0.0, 0.0], 0.05).is_err());
    }
}
