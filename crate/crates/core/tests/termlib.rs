use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ver_core::termlib::{evaluate_library, parse_term, random_term, GrammarCaps, TermLibrary};
use ver_core::Error;

/// Evaluates a canonical term name such as `z1^2*sin(z2)` by hand.
fn eval_name(name: &str, z: &[f64]) -> f64 {
    if name == "1" {
        return 1.0;
    }
    name.split('*')
        .map(|f| {
            if let Some((func, rest)) = f.split_once('(') {
                let k: usize = rest.trim_end_matches(')').trim_start_matches('z').parse().unwrap();
                let x = z[k - 1];
                match func {
                    "sin" => x.sin(),
                    "cos" => x.cos(),
                    "exp" => x.exp(),
                    "tanh" => x.tanh(),
                    "log" => (x.abs() + 1e-8).ln(),
                    other => panic!("unexpected function {other}"),
                }
            } else {
                let (var, power) = f.split_once('^').unwrap_or((f, "1"));
                let k: usize = var.trim_start_matches('z').parse().unwrap();
                z[k - 1].powi(power.parse().unwrap())
            }
        })
        .product()
}

fn random_library(seed: u64, dim: usize) -> TermLibrary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    while terms.len() < 7 {
        let t = random_term(dim, GrammarCaps::default(), &mut rng);
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    TermLibrary::new(terms, dim).unwrap()
}

proptest! {
    #[test]
    fn design_matrix_matches_name_oracle(seed in 0u64..10_000, dim in 1usize..4) {
        let lib = random_library(seed, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let states = DMatrix::from_fn(12, dim, |_, _| rng.gen_range(-2.0..2.0));
        let m = evaluate_library(&lib, &states).unwrap();
        for (j, name) in lib.names().iter().enumerate() {
            for i in 0..12 {
                let z: Vec<f64> = states.row(i).iter().copied().collect();
                let want = eval_name(name, &z);
                prop_assert!((m[(i, j)] - want).abs() <= 1e-12 * (1.0 + want.abs()), "{name}");
            }
        }
    }

    #[test]
    fn names_parse_back_to_the_same_term(seed in 0u64..10_000) {
        let lib = random_library(seed, 3);
        for (t, name) in lib.terms().iter().zip(lib.names()) {
            prop_assert_eq!(&parse_term(&name, 3).unwrap(), t);
        }
    }

    #[test]
    fn signature_ignores_order(seed in 0u64..10_000) {
        let lib = random_library(seed, 2);
        let mut terms = lib.terms().to_vec();
        terms.reverse();
        let shift = seed as usize % terms.len();
        terms.rotate_left(shift);
        prop_assert_eq!(TermLibrary::new(terms, 2).unwrap().signature(), lib.signature());
    }
}

#[test]
fn documented_rows() {
    let lib = TermLibrary::from_strs(&["1", "z1", "z1^2"], 1).unwrap();
    let m = lib.evaluate(&DMatrix::from_row_slice(1, 1, &[2.0])).unwrap();
    assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);
    let lib = TermLibrary::from_strs(&["z1*sin(z2)"], 2).unwrap();
    let m = lib.evaluate(&DMatrix::from_row_slice(1, 2, &[2.0, std::f64::consts::FRAC_PI_2])).unwrap();
    assert!((m[(0, 0)] - 2.0).abs() < 1e-15);
}

#[test]
fn factor_order_is_canonical() {
    assert_eq!(parse_term("sin(z1) * z2", 2).unwrap(), parse_term("z2*sin(z1)", 2).unwrap());
    assert_eq!(parse_term("z2 * sin(z1)", 2).unwrap().to_string(), "z2*sin(z1)");
}

#[test]
fn bad_terms_rejected() {
    assert!(matches!(parse_term("foo(z1)", 2), Err(Error::Parse { .. })));
    assert!(parse_term("z3", 2).is_err());
    assert!(TermLibrary::from_strs(&["z1", "z1"], 2).is_err());
    assert!(TermLibrary::new(vec![], 2).is_err());
}
