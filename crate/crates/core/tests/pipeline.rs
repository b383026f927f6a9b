use cmtomo::error::Error;
use cmtomo::estimators::residual_delta;
use cmtomo::pipeline::*;
use cmtomo::record::design_matrix;
use cmtomo::spin::{DensityMatrix, HermitianBasis};
use proptest::prelude::*;

fn tiny() -> SuiteConfig {
    SuiteConfig {
        n_states: 3,
        t_total_us: 600.0,
        t_grid_us: vec![200.0, 400.0, 600.0],
        calibration_grid_us: vec![300.0, 600.0],
        fit_window_us: 1000.0,
        ..SuiteConfig::default()
    }
}

#[test]
fn fit_recovers_a_known_time_constant() {
    let t: Vec<f64> = (1..=9).map(|i| 0.1 * i as f64).collect();
    let f: Vec<Option<f64>> = t.iter().map(|&t| Some(rise_model(t, 0.5, 16))).collect();
    let fit = fit_exponential(&t, &f, 1.0).unwrap();
    assert!((fit.tau_ms - 0.5).abs() < 1e-6, "{}", fit.tau_ms);
    assert!(fit.relative_residual < 1e-8);
    assert_eq!(fit.points, 9);
}

#[test]
fn fit_ignores_points_outside_the_window_and_missing_values() {
    let t: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
    let mut f: Vec<Option<f64>> = t.iter().map(|&t| Some(rise_model(t, 0.3, 16))).collect();
    f[2] = None;
    for v in f.iter_mut().skip(10) {
        *v = Some(0.0);
    }
    let fit = fit_exponential(&t, &f, 1.0).unwrap();
    assert!((fit.tau_ms - 0.3).abs() < 1e-6);
    assert_eq!(fit.points, 8);
}

#[test]
fn degenerate_curves_are_fit_failures() {
    let t = [0.1, 0.2, 0.3, 0.4];
    let flat = [Some(0.7); 4];
    assert!(matches!(
        fit_exponential(&t, &flat, 1.0),
        Err(Error::FitFailure(_))
    ));
    let short = [Some(0.2), Some(0.3), None, None];
    assert!(matches!(
        fit_exponential(&t, &short, 1.0),
        Err(Error::FitFailure(_))
    ));
    assert!(matches!(
        fit_exponential(&t, &flat[..3], 1.0),
        Err(Error::GridMismatch)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_is_exact_on_model_curves(tau in 0.05f64..5.0) {
        let t: Vec<f64> = (1..=9).map(|i| 0.1 * i as f64).collect();
        let f: Vec<Option<f64>> = t.iter().map(|&t| Some(rise_model(t, tau, 16))).collect();
        let fit = fit_exponential(&t, &f, 1.0).unwrap();
        prop_assert!((fit.tau_ms / tau - 1.0).abs() < 1e-6);
    }

    #[test]
    fn curve_statistics_match_direct_formulas(
        vals in proptest::collection::vec(0.0f64..1.0, 2..12)
    ) {
        let per_state = vals.iter().map(|&v| vec![Some(v)]).collect();
        let c = Curve::from_per_state(per_state, 1);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((c.mean[0].unwrap() - mean).abs() < 1e-12);
        prop_assert!((c.sd[0].unwrap() - var.sqrt()).abs() < 1e-12);
        prop_assert!((c.standard_error(0).unwrap() - (var / n).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn monotonicity_allows_drops_within_one_standard_error() {
    let c = Curve::from_per_state(
        vec![
            vec![Some(0.5), Some(0.49), Some(0.2)],
            vec![Some(0.6), Some(0.59), Some(0.3)],
        ],
        3,
    );
    assert_eq!(c.monotonicity_violations(), vec![2]);
    assert_eq!(c.peak(), Some(0));
}

#[test]
fn fidelity_to_mixed_is_one_only_for_the_mixed_state() {
    assert!((fidelity_to_mixed(&DensityMatrix::maximally_mixed(16)) - 1.0).abs() < 1e-12);
    let pure = cmtomo::spin::haar_random_pure_state(16, 3)
        .unwrap()
        .density();
    // Round-off eigenvalues of order 1e-16 enter through their square roots.
    assert!((fidelity_to_mixed(&pure) - 1.0 / 16.0).abs() < 1e-6);
}

#[test]
fn suite_is_deterministic_and_penalty_of_identical_curves_vanishes() {
    let config = tiny();
    let a = run_suite(&config).unwrap();
    let b = run_suite(&config).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.config_digest, b.config_digest);
    assert_eq!(a.curves.states, vec![1, 2]);
    for c in [&a.curves.ls, a.curves.cs.as_ref().unwrap()] {
        assert!(c.count.iter().all(|&n| n == 2));
        for m in c.mean.iter().flatten() {
            assert!((0.0..=1.0 + 1e-9).contains(m));
        }
    }
    let eta = error_penalty(&a.curves, &b.curves).unwrap();
    assert!(eta.ls.iter().all(|e| *e == Some(0.0)));
    assert!(eta.cs.unwrap().iter().all(|e| *e == Some(0.0)));
}

#[test]
fn reported_residuals_are_recomputable() {
    let config = tiny();
    let data = SuiteData::generate(&config).unwrap();
    let out = run_suite_on(&config, &data, &config.reconstruction).unwrap();
    let basis = HermitianBasis::new(16).unwrap();
    let design = design_matrix(&data.truth_series, &basis, config.gain_k).unwrap();
    for s in &out.states {
        let record = &data.records[s.index];
        for p in &s.points {
            for outcome in std::iter::once(&p.ls).chain(p.cs.as_ref()) {
                let est = outcome.estimate().expect("solved");
                let prefix_design = design.truncate(p.t_us).unwrap();
                let prefix_record = record.truncate(p.t_us).unwrap();
                assert_eq!(prefix_record.len(), p.samples);
                let delta = residual_delta(&est.rho, &prefix_record, &prefix_design).unwrap();
                assert!(
                    (delta - est.residual).abs() <= 1e-8 * est.residual.max(1e-12),
                    "{delta} vs {}",
                    est.residual
                );
            }
        }
    }
}

#[test]
fn penalty_requires_matching_grids() {
    let mut config = tiny();
    config.ls_only = true;
    let a = run_suite(&config).unwrap();
    config.t_grid_us = vec![200.0, 600.0];
    let b = run_suite(&config).unwrap();
    assert!(matches!(
        error_penalty(&a.curves, &b.curves),
        Err(Error::GridMismatch)
    ));
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = [
        SuiteConfig {
            n_states: 1,
            ..tiny()
        },
        SuiteConfig {
            t_grid_us: vec![],
            ..tiny()
        },
        SuiteConfig {
            t_grid_us: vec![400.0, 200.0],
            ..tiny()
        },
        SuiteConfig {
            t_grid_us: vec![900.0],
            ..tiny()
        },
        SuiteConfig {
            sigma: -1.0,
            ..tiny()
        },
        SuiteConfig {
            gain_k: 0.0,
            ..tiny()
        },
    ];
    for c in bad {
        assert_eq!(run_suite(&c).unwrap_err().class(), "invalid-argument");
    }
    assert!(mismatch_experiment(&tiny()).is_err());
    let noiseless = SuiteConfig {
        sigma: 0.0,
        ..tiny()
    };
    assert!(mixed_state_comparison(&noiseless).is_err());
}
