use npmesh_core::gradcheck::{broken_fixture, run_suite, DEFAULT_TOLERANCE};

#[test]
fn every_layer_matches_finite_differences() {
    let suite = run_suite(DEFAULT_TOLERANCE, 0).unwrap();
    for l in &suite.layers {
        println!("{:<24} {:.3e} over {} ({:?})", l.name, l.max_rel_err, l.checked, l.worst);
    }
    assert!(suite.layers.len() >= 14);
    assert!(suite.passed());
}

#[test]
fn suite_holds_for_other_seeds() {
    for seed in [1, 2] {
        assert!(run_suite(DEFAULT_TOLERANCE, seed).unwrap().passed());
    }
}

#[test]
fn broken_fixture_fails() {
    let l = broken_fixture(DEFAULT_TOLERANCE, 3).unwrap();
    assert!(!l.passed);
    assert!(l.max_rel_err > 0.1);
}
