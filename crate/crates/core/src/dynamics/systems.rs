use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemName {
    Linear,
    Cubic,
    Circular,
    Vdp,
    Glider,
    Exp,
    Lo,
    Bruss,
    Water,
}

impl SystemName {
    pub const ALL: [SystemName; 9] = [
        SystemName::Linear,
        SystemName::Cubic,
        SystemName::Circular,
        SystemName::Vdp,
        SystemName::Glider,
        SystemName::Exp,
        SystemName::Lo,
        SystemName::Bruss,
        SystemName::Water,
    ];

    pub const PIXEL: [SystemName; 6] = [
        SystemName::Linear,
        SystemName::Cubic,
        SystemName::Circular,
        SystemName::Vdp,
        SystemName::Glider,
        SystemName::Exp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemName::Linear => "Linear",
            SystemName::Cubic => "Cubic",
            SystemName::Circular => "Circular",
            SystemName::Vdp => "VDP",
            SystemName::Glider => "Glider",
            SystemName::Exp => "Exp",
            SystemName::Lo => "LO",
            SystemName::Bruss => "Bruss",
            SystemName::Water => "Water",
        }
    }
}

impl fmt::Display for SystemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        SystemName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::NotFound(format!("unknown system `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Ode,
    Pde,
}

/// A builtin dynamical system with named constants.
///
/// ODE systems are planar (`dim = 2`); PDE systems report their channel
/// count in `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: SystemName,
    pub kind: SystemKind,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
}

/// Initial state, step and framing used when a pixel system is rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSetup {
    pub z0: [f64; 2],
    pub dt: f64,
    pub frames: usize,
    /// (x_min, x_max, y_min, y_max)
    pub bounds: [f64; 4],
}

pub fn builtin_system(name: &str) -> Result<SystemSpec> {
    Ok(SystemSpec::new(name.parse()?))
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl SystemSpec {
    pub fn new(name: SystemName) -> Self {
        use SystemName::*;
        let (kind, dim, params) = match name {
            Linear => (SystemKind::Ode, 2, params(&[("damping", 0.1), ("omega", 2.0)])),
            Cubic => (SystemKind::Ode, 2, params(&[("damping", 0.1), ("omega", 2.0)])),
            Circular => (SystemKind::Ode, 2, params(&[("omega", 1.0)])),
            Vdp => (SystemKind::Ode, 2, params(&[("mu", 2.0)])),
            Glider => (SystemKind::Ode, 2, params(&[("drag", 0.05), ("v_min", 0.1)])),
            Exp => (SystemKind::Ode, 2, params(&[("rate", 0.5)])),
            Lo => (
                SystemKind::Pde,
                2,
                params(&[("d1", 0.1), ("d2", 0.1), ("beta", 1.0), ("kinetics", 1.0)]),
            ),
            Bruss => (
                SystemKind::Pde,
                2,
                params(&[
                    ("d1", 1.0),
                    ("d2", 0.1),
                    ("a", 1.0),
                    ("b", 3.0),
                    ("kinetics", 1.0),
                ]),
            ),
            Water => (SystemKind::Pde, 3, params(&[("g_r", 1.0)])),
        };
        Self {
            name,
            kind,
            dim,
            params,
        }
    }

    pub fn param(&self, key: &str) -> f64 {
        self.params.get(key).copied().unwrap_or_else(|| {
            panic!("system {} has no parameter `{key}`", self.name)
        })
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter {key} must be finite")));
        }
        match self.params.get_mut(key) {
            Some(slot) => *slot = value,
            None => {
                return Err(Error::NotFound(format!(
                    "system {} has no parameter `{key}`",
                    self.name
                )))
            }
        }
        Ok(self)
    }

    /// Evaluates the vector field of an ODE system.
    pub fn rhs(&self, z: &[f64], out: &mut [f64]) {
        use SystemName::*;
        let (z1, z2) = (z[0], z[1]);
        match self.name {
            Linear => {
                let (c, w) = (self.param("damping"), self.param("omega"));
                out[0] = -c * z1 + w * z2;
                out[1] = -w * z1 - c * z2;
            }
            Cubic => {
                let (c, w) = (self.param("damping"), self.param("omega"));
                let (a, b) = (z1 * z1 * z1, z2 * z2 * z2);
                out[0] = -c * a + w * b;
                out[1] = -w * a - c * b;
            }
            Circular => {
                let w = self.param("omega");
                out[0] = -w * z2;
                out[1] = w * z1;
            }
            Vdp => {
                let mu = self.param("mu");
                out[0] = z2;
                out[1] = mu * (1.0 - z1 * z1) * z2 - z1;
            }
            Glider => {
                let v = z1.max(self.param("v_min"));
                out[0] = -z2.sin() - self.param("drag") * z1 * z1;
                out[1] = z1 - z2.cos() / v;
            }
            Exp => {
                let r = self.param("rate");
                out[0] = -r * z1;
                out[1] = -r * z2;
            }
            Lo | Bruss | Water => panic!("{} is a PDE system", self.name),
        }
    }

    /// Ground-truth right-hand side written in the term grammar, as
    /// `(term, coefficient per state dimension)`. Glider's `cos(z2)/z1`
    /// has no grammar form and is omitted.
    pub fn truth_terms(&self) -> Option<Vec<(&'static str, Vec<f64>)>> {
        use SystemName::*;
        let t = match self.name {
            Linear => {
                let (c, w) = (self.param("damping"), self.param("omega"));
                vec![("z1", vec![-c, -w]), ("z2", vec![w, -c])]
            }
            Cubic => {
                let (c, w) = (self.param("damping"), self.param("omega"));
                vec![("z1^3", vec![-c, -w]), ("z2^3", vec![w, -c])]
            }
            Circular => {
                let w = self.param("omega");
                vec![("z1", vec![0.0, w]), ("z2", vec![-w, 0.0])]
            }
            Vdp => {
                let mu = self.param("mu");
                vec![
                    ("z1", vec![0.0, -1.0]),
                    ("z2", vec![1.0, mu]),
                    ("z1^2*z2", vec![0.0, -mu]),
                ]
            }
            Glider => vec![
                ("z1", vec![0.0, 1.0]),
                ("z1^2", vec![-self.param("drag"), 0.0]),
                ("sin(z2)", vec![-1.0, 0.0]),
            ],
            Exp => {
                let r = self.param("rate");
                vec![("z1", vec![-r, 0.0]), ("z2", vec![0.0, -r])]
            }
            Lo | Bruss | Water => return None,
        };
        Some(t)
    }

    /// True when the system's right-hand side is not fully expressible in
    /// the term grammar, or its form was chosen rather than transcribed.
    pub fn canonical_form_note(&self) -> Option<&'static str> {
        match self.kind {
            SystemKind::Ode => Some("canonical form, chosen rather than transcribed"),
            SystemKind::Pde => None,
        }
    }

    pub fn pixel_setup(&self) -> Option<PixelSetup> {
        use SystemName::*;
        let (z0, bounds) = match self.name {
            Linear => ([2.0, 0.0], [-2.5, 2.5, -2.5, 2.5]),
            Cubic => ([1.0, 0.0], [-1.5, 1.5, -1.5, 1.5]),
            Circular => ([1.0, 0.0], [-1.5, 1.5, -1.5, 1.5]),
            Vdp => ([2.0, 0.0], [-3.0, 3.0, -5.0, 5.0]),
            Glider => ([1.5, 0.5], [0.0, 3.0, -1.5, 1.5]),
            Exp => ([2.0, -1.5], [-2.5, 2.5, -2.5, 2.5]),
            Lo | Bruss | Water => return None,
        };
        Some(PixelSetup {
            z0,
            dt: 0.05,
            frames: 200,
            bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lo_defaults() {
        let s = builtin_system("LO").unwrap();
        assert_eq!(s.kind, SystemKind::Pde);
        assert_eq!(s.param("d1"), 0.1);
        assert_eq!(s.param("d2"), 0.1);
        assert_eq!(s.param("beta"), 1.0);
    }

    #[test]
    fn bruss_defaults() {
        let s = builtin_system("Bruss").unwrap();
        assert_eq!(s.param("d1"), 1.0);
        assert_eq!(s.param("d2"), 0.1);
        assert_eq!(s.param("a"), 1.0);
        assert_eq!(s.param("b"), 3.0);
    }

    #[test]
    fn unknown_system() {
        assert!(matches!(builtin_system("foo"), Err(Error::NotFound(_))));
    }

    #[test]
    fn names_round_trip() {
        for n in SystemName::ALL {
            assert_eq!(n.as_str().parse::<SystemName>().unwrap(), n);
        }
    }

    #[test]
    fn ode_dims_and_finite_params() {
        for n in SystemName::ALL {
            let s = SystemSpec::new(n);
            match s.kind {
                SystemKind::Ode => assert_eq!(s.dim, 2),
                SystemKind::Pde => assert!((1..=3).contains(&s.dim)),
            }
            assert!(s.params.values().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn truth_terms_match_rhs() {
        use crate::termlib::Term;
        for n in [
            SystemName::Linear,
            SystemName::Cubic,
            SystemName::Circular,
            SystemName::Vdp,
            SystemName::Exp,
        ] {
            let s = SystemSpec::new(n);
            let truth = s.truth_terms().unwrap();
            let z = [0.7, -1.3];
            let mut expected = [0.0; 2];
            s.rhs(&z, &mut expected);
            let mut got = [0.0; 2];
            for (text, coefs) in &truth {
                let t = Term::parse(text, 2).unwrap();
                let v = t.eval(&z);
                got[0] += coefs[0] * v;
                got[1] += coefs[1] * v;
            }
            assert!((got[0] - expected[0]).abs() < 1e-12, "{n}");
            assert!((got[1] - expected[1]).abs() < 1e-12, "{n}");
        }
    }
}
