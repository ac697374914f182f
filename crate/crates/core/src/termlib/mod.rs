//! Candidate-term grammar, canonical term libraries, and their evaluation
//! into design matrices.

mod parse;
mod term;

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::{parse_term, parse_term_with_caps};
pub use term::{Factor, Func, Term, LOG_GUARD};

/// Guardrails applied to every proposed library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarCaps {
    pub k_max: usize,
    pub max_power: u32,
}

impl Default for GrammarCaps {
    fn default() -> Self {
        Self {
            k_max: 25,
            max_power: 6,
        }
    }
}

/// Ordered set of distinct canonical terms over `dim` variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermLibrary {
    terms: Vec<Term>,
    dim: usize,
}

impl TermLibrary {
    pub fn new(terms: Vec<Term>, dim: usize) -> Result<Self> {
        Self::with_caps(terms, dim, GrammarCaps::default())
    }

    pub fn with_caps(terms: Vec<Term>, dim: usize, caps: GrammarCaps) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("library must contain at least one term".into()));
        }
        if terms.len() > caps.k_max {
            return Err(Error::InvalidArgument(format!(
                "library has {} terms, cap is {}",
                terms.len(),
                caps.k_max
            )));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::InvalidArgument(format!("duplicate term `{t}`")));
            }
            if t.max_var().is_some_and(|v| v >= dim) {
                return Err(Error::InvalidArgument(format!("term `{t}` exceeds dimension {dim}")));
            }
            if t.max_power() > caps.max_power {
                return Err(Error::InvalidArgument(format!(
                    "term `{t}` exceeds power cap {}",
                    caps.max_power
                )));
            }
        }
        Ok(Self { terms, dim })
    }

    /// Parses a comma-separated list, dropping repeated terms.
    pub fn parse_list(text: &str, dim: usize, caps: GrammarCaps) -> Result<Self> {
        let mut terms: Vec<Term> = Vec::new();
        let mut base = 0usize;
        for piece in text.split(',') {
            if !piece.trim().is_empty() {
                let t = parse_term_with_caps(piece, dim, caps.max_power).map_err(|e| match e {
                    Error::Parse { offset, message } => Error::Parse {
                        offset: base + offset,
                        message,
                    },
                    other => other,
                })?;
                if !terms.contains(&t) {
                    terms.push(t);
                }
            }
            base += piece.len() + 1;
        }
        Self::with_caps(terms, dim, caps)
    }

    pub fn from_strs(items: &[&str], dim: usize) -> Result<Self> {
        let terms = items
            .iter()
            .map(|s| parse_term(s, dim))
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms, dim)
    }

    /// All monomials of total degree `0..=degree` (degree 0 only when
    /// `constant`), ordered by degree.
    pub fn polynomial(dim: usize, degree: u32, constant: bool) -> Self {
        let mut terms = Vec::new();
        if constant {
            terms.push(Term::constant());
        }
        for deg in 1..=degree {
            let mut exps = vec![0u32; dim];
            monomials(dim, deg, 0, &mut exps, &mut terms);
        }
        Self { terms, dim }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index_of(&self, t: &Term) -> Option<usize> {
        self.terms.iter().position(|x| x == t)
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.to_string()).collect()
    }

    /// Order-independent identity of the library.
    pub fn signature(&self) -> String {
        library_signature(self)
    }

    /// Evaluates every term at one state.
    pub fn eval_row(&self, z: &[f64], out: &mut [f64]) {
        for (slot, t) in out.iter_mut().zip(&self.terms) {
            *slot = t.eval(z);
        }
    }

    pub fn evaluate(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        evaluate_library(self, states)
    }
}

fn monomials(dim: usize, remaining: u32, var: usize, exps: &mut Vec<u32>, out: &mut Vec<Term>) {
    if var + 1 == dim {
        exps[var] = remaining;
        let factors = exps
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(v, &p)| Factor::Poly { var: v, power: p })
            .collect();
        out.push(Term::from_factors(factors));
        exps[var] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        exps[var] = p;
        monomials(dim, remaining - p, var + 1, exps, out);
    }
    exps[var] = 0;
}

impl fmt::Display for TermLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(", "))
    }
}

pub fn library_signature(library: &TermLibrary) -> String {
    let mut names = library.names();
    names.sort();
    names.join(",")
}

/// Design matrix with entry `(i, j) = theta_j(z_i)`.
pub fn evaluate_library(library: &TermLibrary, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if states.ncols() != library.dim {
        return Err(Error::InvalidArgument(format!(
            "states have {} columns, library dimension is {}",
            states.ncols(),
            library.dim
        )));
    }
    let n = states.nrows();
    let k = library.len();
    let mut out = DMatrix::zeros(n, k);
    let mut z = vec![0.0; library.dim];
    for i in 0..n {
        for (j, slot) in z.iter_mut().enumerate() {
            *slot = states[(i, j)];
        }
        for (j, t) in library.terms.iter().enumerate() {
            let v = t.eval(&z);
            if !v.is_finite() {
                return Err(Error::Eval {
                    row: i,
                    term: t.to_string(),
                });
            }
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Draws one random term permitted by the grammar.
pub fn random_term(dim: usize, caps: GrammarCaps, rng: &mut impl Rng) -> Term {
    let roll: f64 = rng.gen();
    if roll < 0.1 {
        return Term::constant();
    }
    if roll < 0.65 {
        // monomial of total degree 1..=3
        let degree = rng.gen_range(1..=3u32.min(caps.max_power.max(1)));
        let factors = (0..degree)
            .map(|_| Factor::Poly {
                var: rng.gen_range(0..dim),
                power: 1,
            })
            .collect();
        return Term::from_factors(factors);
    }
    let func = Func::ALL[rng.gen_range(0..Func::ALL.len())];
    let f = Factor::Func {
        func,
        var: rng.gen_range(0..dim),
    };
    if rng.gen_bool(0.25) {
        Term::from_factors(vec![
            Factor::Poly {
                var: rng.gen_range(0..dim),
                power: 1,
            },
            f,
        ])
    } else {
        Term::from_factors(vec![f])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, prop_oneof, proptest, Strategy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evaluates_rows() {
        let lib = TermLibrary::from_strs(&["1", "z1", "z1^2"], 1).unwrap();
        let m = evaluate_library(&lib, &DMatrix::from_row_slice(1, 1, &[2.0])).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);
        let lib = TermLibrary::from_strs(&["z1*sin(z2)"], 2).unwrap();
        let m = evaluate_library(
            &lib,
            &DMatrix::from_row_slice(1, 2, &[2.0, std::f64::consts::FRAC_PI_2]),
        )
        .unwrap();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_guard_keeps_zero_finite() {
        let lib = TermLibrary::from_strs(&["log(z1)"], 1).unwrap();
        let m = evaluate_library(&lib, &DMatrix::zeros(1, 1)).unwrap();
        assert!((m[(0, 0)] - LOG_GUARD.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_finite_reports_row_and_term() {
        let lib = TermLibrary::from_strs(&["z1", "exp(z1)"], 1).unwrap();
        let states = DMatrix::from_row_slice(2, 1, &[1.0, 1000.0]);
        match evaluate_library(&lib, &states) {
            Err(Error::Eval { row, term }) => assert_eq!((row, term.as_str()), (1, "exp(z1)")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn signature_is_order_independent() {
        let a = TermLibrary::from_strs(&["z1", "z2"], 2).unwrap();
        let b = TermLibrary::from_strs(&["z2", "z1"], 2).unwrap();
        assert_eq!(a.signature(), b.signature());
        let c = TermLibrary::from_strs(&["1", "sin(z1)"], 1).unwrap();
        assert_eq!(c.signature(), "1,sin(z1)");
    }

    #[test]
    fn library_invariants() {
        assert!(TermLibrary::new(vec![], 2).is_err());
        assert!(TermLibrary::from_strs(&["z1", "x"], 2).is_err());
        let many: Vec<Term> = TermLibrary::polynomial(2, 6, true).terms().to_vec();
        assert!(many.len() > 25);
        assert!(TermLibrary::new(many, 2).is_err());
        let dedup = TermLibrary::parse_list("z1, x, sin(y)", 2, GrammarCaps::default()).unwrap();
        assert_eq!(dedup.names(), vec!["z1", "sin(z2)"]);
    }

    #[test]
    fn parse_list_offsets_are_absolute() {
        match TermLibrary::parse_list("z1, foo(z2)", 2, GrammarCaps::default()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn polynomial_library() {
        let lib = TermLibrary::polynomial(2, 2, true);
        assert_eq!(lib.names(), vec!["1", "z1", "z2", "z1^2", "z1*z2", "z2^2"]);
    }

    /// Naive scalar oracle: evaluates each factor by name from its printed form.
    fn oracle_eval(text: &str, z: &[f64]) -> f64 {
        text.split('*')
            .map(|f| {
                if f == "1" {
                    return 1.0;
                }
                if let Some(open) = f.find('(') {
                    let var: usize = f[open + 2..f.len() - 1].parse().unwrap();
                    let x = z[var - 1];
                    return match &f[..open] {
                        "sin" => x.sin(),
                        "cos" => x.cos(),
                        "exp" => x.exp(),
                        "tanh" => x.tanh(),
                        "log" => (x.abs() + 1e-8).ln(),
                        other => panic!("{other}"),
                    };
                }
                let (var, pow) = match f.split_once('^') {
                    Some((v, p)) => (v, p.parse::<i32>().unwrap()),
                    None => (f, 1),
                };
                z[var[1..].parse::<usize>().unwrap() - 1].powi(pow)
            })
            .product()
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut terms = Vec::new();
            while terms.len() < 8 {
                let t = random_term(3, GrammarCaps::default(), &mut rng);
                if !terms.contains(&t) {
                    terms.push(t);
                }
            }
            let lib = TermLibrary::new(terms, 3).unwrap();
            let states = DMatrix::from_fn(30, 3, |_, _| rng.gen_range(-2.0..2.0));
            let m = evaluate_library(&lib, &states).unwrap();
            for i in 0..30 {
                let z: Vec<f64> = states.row(i).iter().copied().collect();
                for (j, name) in lib.names().iter().enumerate() {
                    let expect = oracle_eval(name, &z);
                    assert!((m[(i, j)] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn partial_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t = random_term(2, GrammarCaps::default(), &mut rng);
            let z = [rng.gen_range(0.2..1.5), rng.gen_range(-1.5..-0.2)];
            for v in 0..2 {
                let h = 1e-6;
                let mut zp = z;
                let mut zm = z;
                zp[v] += h;
                zm[v] -= h;
                let fd = (t.eval(&zp) - t.eval(&zm)) / (2.0 * h);
                let an = t.partial(&z, v);
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{t} d/dz{v}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn doubling_scales_linear_columns() {
        let lib = TermLibrary::from_strs(&["z1", "z2", "z1^2", "sin(z1)"], 2).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.7]);
        let a = evaluate_library(&lib, &s).unwrap();
        let b = evaluate_library(&lib, &(&s * 2.0)).unwrap();
        for i in 0..2 {
            assert_eq!(b[(i, 0)], 2.0 * a[(i, 0)]);
            assert_eq!(b[(i, 1)], 2.0 * a[(i, 1)]);
        }
    }

    fn arb_factor(dim: usize) -> impl Strategy<Value = String> {
        prop_oneof![
            (1..=dim, 1u32..=3).prop_map(|(v, p)| format!("z{v}^{p}")),
            (1..=dim).prop_map(|v| format!("z{v}")),
            (0usize..5, 1..=dim).prop_map(|(f, v)| format!(
                "{}(z{v})",
                ["sin", "cos", "exp", "tanh", "log"][f]
            )),
        ]
    }

    proptest! {
        #[test]
        fn print_parse_is_identity(factors in proptest::collection::vec(arb_factor(3), 1..4)) {
            let text = factors.join(" * ");
            if let Ok(t) = parse_term(&text, 3) {
                let printed = t.to_string();
                let again = parse_term(&printed, 3).unwrap();
                prop_assert_eq!(&again, &t);
                prop_assert_eq!(again.to_string(), printed);
            }
        }

        #[test]
        fn signature_stable_under_permutation(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut terms = Vec::new();
            while terms.len() < 6 {
                let t = random_term(2, GrammarCaps::default(), &mut rng);
                if !terms.contains(&t) { terms.push(t); }
            }
            let a = TermLibrary::new(terms.clone(), 2).unwrap();
            terms.reverse();
            terms.swap(0, 3);
            let b = TermLibrary::new(terms, 2).unwrap();
            prop_assert_eq!(a.signature(), b.signature());
        }
    }
}
