use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Offset added inside `log` so near-zero states stay finite.
pub const LOG_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Func {
    Cos,
    Exp,
    Log,
    Sin,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 5] = [Func::Cos, Func::Exp, Func::Log, Func::Sin, Func::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => (x.abs() + LOG_GUARD).ln(),
            Func::Sin => x.sin(),
            Func::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Func::Cos => -x.sin(),
            Func::Exp => x.exp(),
            Func::Log => x.signum() / (x.abs() + LOG_GUARD),
            Func::Sin => x.cos(),
            Func::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// One multiplicative factor of a term. Variable indices are zero-based;
/// they print one-based (`z1` is index 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    Const,
    Poly { var: usize, power: u32 },
    Func { func: Func, var: usize },
}

impl Factor {
    fn key(&self) -> (u8, Option<Func>, usize, u32) {
        match *self {
            Factor::Const => (0, None, 0, 0),
            Factor::Poly { var, power } => (1, None, var, power),
            Factor::Func { func, var } => (2, Some(func), var, 0),
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match *self {
            Factor::Const => 1.0,
            Factor::Poly { var, power } => z[var].powi(power as i32),
            Factor::Func { func, var } => func.apply(z[var]),
        }
    }

    /// Partial derivative with respect to `z[wrt]`.
    pub fn partial(&self, z: &[f64], wrt: usize) -> f64 {
        match *self {
            Factor::Poly { var, power } if var == wrt => power as f64 * z[var].powi(power as i32 - 1),
            Factor::Func { func, var } if var == wrt => func.derivative(z[var]),
            _ => 0.0,
        }
    }

    pub fn var(&self) -> Option<usize> {
        match *self {
            Factor::Const => None,
            Factor::Poly { var, .. } | Factor::Func { var, .. } => Some(var),
        }
    }
}

impl PartialOrd for Factor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Factor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Factor::Const => f.write_str("1"),
            Factor::Poly { var, power: 1 } => write!(f, "z{}", var + 1),
            Factor::Poly { var, power } => write!(f, "z{}^{}", var + 1, power),
            Factor::Func { func, var } => write!(f, "{}(z{})", func.name(), var + 1),
        }
    }
}

/// A canonical product of factors: polynomial factors by variable, then
/// function factors by name and variable. The constant appears only alone.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term {
    factors: Vec<Factor>,
}

impl Term {
    pub fn constant() -> Self {
        Term {
            factors: vec![Factor::Const],
        }
    }

    pub fn var(var: usize) -> Self {
        Term {
            factors: vec![Factor::Poly { var, power: 1 }],
        }
    }

    /// Builds the canonical form: drops constants next to other factors,
    /// merges repeated polynomial variables and sorts.
    pub fn from_factors(factors: Vec<Factor>) -> Self {
        let mut poly: Vec<(usize, u32)> = Vec::new();
        let mut funcs: Vec<Factor> = Vec::new();
        for f in factors {
            match f {
                Factor::Const => {}
                Factor::Poly { var, power } => match poly.iter_mut().find(|(v, _)| *v == var) {
                    Some(slot) => slot.1 += power,
                    None => poly.push((var, power)),
                },
                Factor::Func { .. } => funcs.push(f),
            }
        }
        let mut out: Vec<Factor> = poly
            .into_iter()
            .map(|(var, power)| Factor::Poly { var, power })
            .chain(funcs)
            .collect();
        if out.is_empty() {
            out.push(Factor::Const);
        }
        out.sort();
        Term { factors: out }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_constant(&self) -> bool {
        self.factors == [Factor::Const]
    }

    /// Largest polynomial power on any variable.
    pub fn max_power(&self) -> u32 {
        self.factors
            .iter()
            .map(|f| match f {
                Factor::Poly { power, .. } => *power,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn max_var(&self) -> Option<usize> {
        self.factors.iter().filter_map(Factor::var).max()
    }

    /// Total polynomial degree plus one per function factor.
    pub fn complexity(&self) -> u32 {
        self.factors
            .iter()
            .map(|f| match f {
                Factor::Const => 0,
                Factor::Poly { power, .. } => *power,
                Factor::Func { .. } => 1,
            })
            .sum()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(z)).product()
    }

    /// Partial derivative with respect to `z[wrt]` by the product rule.
    pub fn partial(&self, z: &[f64], wrt: usize) -> f64 {
        let mut total = 0.0;
        for (i, f) in self.factors.iter().enumerate() {
            let d = f.partial(z, wrt);
            if d == 0.0 {
                continue;
            }
            let rest: f64 = self
                .factors
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, g)| g.eval(z))
                .product();
            total += d * rest;
        }
        total
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            write!(f, "{factor}")?;
        }
        Ok(())
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Term {
    type Error = crate::error::Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        // serialized terms carry no dimension; accept any index the grammar allows
        super::parse::parse_term_with_caps(&s, usize::MAX, super::GrammarCaps::default().max_power)
    }
}
