use gpr_core::analysis::distortion_pair;
use gpr_core::io::{gram_tuple_from_json, gram_tuple_to_json, prior_from_json, prior_to_json, signal_from_json, signal_to_json};
use gpr_core::repr::GroupAction;
use gpr_core::rng::stream_rng;
use gpr_core::*;

#[test]
fn recovers_signal_from_mra_samples() {
    let s = RepresentationStructure::real([(8, 4)]).unwrap();
    let mut rng = stream_rng(11, 0);
    let prior = random_subspace_prior::<f64, _>(&s, 3, &mut rng).unwrap();
    let basis = prior.basis().unwrap();
    let truth = decompose((basis * DVector::from_fn(3, |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5)).as_slice(), &s).unwrap();
    let set = sample_observations(&truth, GroupAction::FullAmbiguity, 0.0, 20_000, 3).unwrap();
    let measured = extract_gram(&empirical_second_moment(&set), &s).unwrap();
    // finite-sample Gram is only close to the truth
    assert!(measured.distance(&gram_tuple(&truth)) / gram_tuple(&truth).norm() < 0.1);
    let config = SolverConfig {
        tol: 1e-3,
        ..SolverConfig::default()
    };
    let exact = solve(&gram_tuple(&truth), &prior, &SolverConfig::default(), None, Some(&truth)).unwrap();
    assert!(exact.converged);
    assert!(exact.oracle_error.unwrap() < 1e-5);
    let noisy = solve(&measured, &prior, &config, None, Some(&truth)).unwrap();
    assert!(noisy.oracle_error.unwrap() < 0.2, "{:?}", noisy.oracle_error);
}

#[test]
fn complex_cyclic_power_spectrum_is_the_gram_tuple() {
    let s = RepresentationStructure::cyclic(8, Field::Complex).unwrap();
    let x = random_signal::<Complex64, _>(&s, &mut stream_rng(12, 0)).unwrap();
    let g = gram_tuple(&x);
    for (l, m) in g.grams().iter().enumerate() {
        assert!((m[(0, 0)].re - x.block(l)[(0, 0)].norm_sqr()).abs() < 1e-14);
        assert_eq!(m[(0, 0)].im, 0.0);
    }
    let shifted = apply(&repr::cyclic_element::<Complex64>(8, 3).unwrap(), &x).unwrap();
    assert!(gram_tuple(&shifted).distance(&g) < 1e-12);
}

#[test]
fn files_round_trip_and_solve_identically() {
    let s = RepresentationStructure::complex([(3, 2), (2, 1)]).unwrap();
    let mut rng = stream_rng(13, 0);
    let prior = random_subspace_prior::<Complex64, _>(&s, 2, &mut rng).unwrap();
    let truth = random_signal::<Complex64, _>(&s, &mut rng).unwrap();
    let g = gram_tuple(&truth);
    let g2 = gram_tuple_from_json::<Complex64>(&gram_tuple_to_json(&g)).unwrap();
    let p2 = prior_from_json::<Complex64>(&prior_to_json(&prior), std::path::Path::new(".")).unwrap();
    let t2 = signal_from_json::<Complex64>(&signal_to_json(&truth)).unwrap();
    assert_eq!(g, g2);
    assert_eq!(prior, p2);
    assert_eq!(truth, t2);
    let config = SolverConfig {
        max_iters: 30,
        ..SolverConfig::default()
    };
    let a = solve(&g, &prior, &config, None, None).unwrap();
    let b = solve(&g2, &p2, &config, None, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn experiments_do_not_depend_on_thread_count() {
    let mut cfg = ExperimentConfig::error_vs_noise();
    cfg.trials = 8;
    cfg.solver.max_iters = 60;
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_error_vs_noise::<f64>(&cfg).unwrap().summary.render());
    let b = four.install(|| run_error_vs_noise::<f64>(&cfg).unwrap().summary.render());
    assert_eq!(a, b);

    let s = RepresentationStructure::real([(8, 4)]).unwrap();
    let prior = random_subspace_prior::<f64, _>(&s, 4, &mut stream_rng(14, 0)).unwrap();
    let a = one.install(|| distortion_estimate(&s, &prior, 500, &mut stream_rng(14, 1)).unwrap());
    let b = four.install(|| distortion_estimate(&s, &prior, 500, &mut stream_rng(14, 1)).unwrap());
    assert_eq!(a, b);
}

#[test]
fn antipodal_pairs_are_skipped() {
    let s = RepresentationStructure::real([(8, 4)]).unwrap();
    let x = random_signal::<f64, _>(&s, &mut stream_rng(15, 0)).unwrap();
    assert_eq!(analysis::distortion_ratio(&x, &x.scale(-1.0)).unwrap(), None);
    let prior = random_subspace_prior::<f64, _>(&s, 4, &mut stream_rng(15, 1)).unwrap();
    let (a, b) = distortion_pair(&s, prior.basis().unwrap(), 3, 5).unwrap();
    let rel = rho(&a, &b).unwrap() / a.norm();
    assert!((rel - 1e-1).abs() < 1e-12, "{rel}");
}

/// First-run value for `[(8,4)]`, `M = 4`, 10⁵ pairs.
const DISTORTION_ALPHA_BASELINE: f64 = 0.13428155928157254;

#[test]
fn distortion_lower_bound_regression() {
    let s = RepresentationStructure::real([(8, 4)]).unwrap();
    let prior = random_subspace_prior::<f64, _>(&s, 4, &mut stream_rng(8, 1)).unwrap();
    let r = distortion_estimate(&s, &prior, 100_000, &mut stream_rng(8, 2)).unwrap();
    assert!(r.warning.is_none());
    assert!(r.alpha_lower > 0.0 && r.beta_upper.is_finite());
    assert_eq!(r.alpha_lower, DISTORTION_ALPHA_BASELINE, "{:?}", r.alpha_lower);
}
