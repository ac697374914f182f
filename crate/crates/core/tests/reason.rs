use ver_core::dynamics::{integrate_ode, SystemName, SystemSpec, Trajectory};
use ver_core::reason::{
    run_discovery, DefaultSelector, DiscoveryConfig, MutationProposer, PixelAssessor, ReplayProposer,
    ScriptedProposer,
};
use ver_core::sindy::DerivMethod;
use ver_core::termlib::parse_term;
use ver_core::Error;

fn clean(name: SystemName) -> Trajectory {
    let spec = SystemSpec::new(name);
    let s = spec.pixel_setup().unwrap();
    integrate_ode(&spec, &s.z0, s.dt, s.frames).unwrap()
}

fn assessor(name: SystemName) -> PixelAssessor {
    PixelAssessor::from_trajectory(&clean(name), DerivMethod::Central).unwrap()
}

#[test]
fn mutation_search_is_deterministic() {
    let cfg = DiscoveryConfig::default();
    let run = || {
        run_discovery(
            &mut assessor(SystemName::Linear),
            &mut MutationProposer::new(7),
            &mut DefaultSelector,
            &cfg,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.equation.coeffs.values, b.equation.coeffs.values);
    assert_eq!(a.transcript_jsonl(), b.transcript_jsonl());
}

#[test]
fn circular_recovered_without_false_positives() {
    let spec = SystemSpec::new(SystemName::Circular);
    let truth = spec.truth_terms().unwrap();
    let out = run_discovery(
        &mut assessor(SystemName::Circular),
        &mut MutationProposer::new(3),
        &mut DefaultSelector,
        &DiscoveryConfig::default(),
    )
    .unwrap();
    let eq = &out.equation;
    for (i, t) in eq.library.terms().iter().enumerate() {
        for j in 0..2 {
            let expected = truth
                .iter()
                .find(|(name, _)| parse_term(name, 2).unwrap() == *t)
                .map_or(0.0, |(_, c)| c[j]);
            assert_eq!(eq.is_active(i, j), expected != 0.0, "{t} in column {j}: {eq}");
        }
    }
    let best = out.pool.records().iter().map(|r| r.fitness).fold(f64::MIN, f64::max);
    assert_eq!(eq.metrics.unwrap().fitness, best);
}

#[test]
fn replayed_transcript_reproduces_pool() {
    let libs: Vec<String> = ["1, z1, z2", "z1, z2", "z1, z2, z1^2", "z1", "z2, z1*z2", "z1, z2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cfg = DiscoveryConfig { r_stop: 2, ..Default::default() };
    let first = run_discovery(
        &mut assessor(SystemName::Linear),
        &mut ScriptedProposer::new(libs),
        &mut DefaultSelector,
        &cfg,
    )
    .unwrap();
    assert_eq!(first.pool.len(), 6);
    assert_eq!(first.stopped_at, Some(6));

    let mut replay = ReplayProposer::from_jsonl(&first.transcript_jsonl()).unwrap();
    let second = run_discovery(&mut assessor(SystemName::Linear), &mut replay, &mut DefaultSelector, &cfg).unwrap();
    assert_eq!(second.pool.len(), 6);
    assert_eq!(second.stopped_at, Some(6));
    assert_eq!(second.transcript_jsonl(), first.transcript_jsonl());
}

#[test]
fn parse_failures_leave_gaps() {
    let items: Vec<String> = ["z9", "z1^99", "z1, z2", "bogus(", "sin(", "z1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let out = run_discovery(
        &mut assessor(SystemName::Linear),
        &mut ScriptedProposer::new(items),
        &mut DefaultSelector,
        &DiscoveryConfig::default(),
    )
    .unwrap();
    // each failing iteration consumes two attempts
    let gaps: Vec<usize> = out.steps.iter().filter(|s| s.gap.is_some()).map(|s| s.t).collect();
    assert_eq!(gaps, vec![1, 3]);
    assert_eq!(out.pool.len(), 2);
    assert!(out.transcript_jsonl().contains("\"gap\""));
}

#[test]
fn nothing_assessable_is_failure() {
    let err = run_discovery(
        &mut assessor(SystemName::Linear),
        &mut ScriptedProposer::repeating("z7"),
        &mut DefaultSelector,
        &DiscoveryConfig { max_iters: 4, ..Default::default() },
    )
    .unwrap_err();
    assert!(matches!(err, Error::DiscoveryFailed));
}

#[test]
fn adaptive_eta_is_recorded() {
    let cfg = DiscoveryConfig { adaptive_eta: true, ..Default::default() };
    let out = run_discovery(
        &mut assessor(SystemName::Linear),
        &mut MutationProposer::new(5),
        &mut DefaultSelector,
        &cfg,
    )
    .unwrap();
    for (r, s) in out.pool.records().iter().zip(out.steps.iter().filter(|s| s.gap.is_none())) {
        assert_eq!(r.eta, s.eta);
        assert_eq!(r.equation.eta, r.eta);
    }
    assert!(out.pool.records().iter().any(|r| r.eta != cfg.eta));
}
