use nalgebra::{DMatrix, DVector};
use sgmcmc::{
    exact_expectation, weak_order_estimate, AffineStep, Expectation, GaussianConjugateModel,
    IntegratorKind, Reference, State, TestFunction, WeakOrderConfig, WeakOrderError,
};

fn quadratic() -> GaussianConjugateModel {
    GaussianConjugateModel::new(vec![])
}

fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    assert!((a - b).amax() < tol, "{a} vs {b}");
}

#[test]
fn probed_matrices_match_hand_derivation() {
    let (h, d) = (0.3f64, 2.0);
    let s = (2.0 * d * h).sqrt();
    let m = quadratic();

    let e = (-d * h / 2.0f64).exp();
    let aboba = AffineStep::probe(&m, IntegratorKind::SghmcAboba, d, h).unwrap();
    let pp = e * e - e * h * h / 2.0;
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[1.0 - e * h * h / 2.0, h / 2.0 + h / 2.0 * pp, -e * h, pp],
    );
    assert_close(&aboba.a, &a, 1e-14);
    assert_close(&aboba.c, &DMatrix::from_column_slice(2, 1, &[h * e * s / 2.0, e * s]), 1e-14);
    assert!(aboba.b.amax() == 0.0);

    let euler = AffineStep::probe(&m, IntegratorKind::SghmcEuler, d, h).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[1.0 - h * h, h * (1.0 - d * h), -h, 1.0 - d * h]);
    assert_close(&euler.a, &a, 1e-14);
    assert_close(&euler.c, &DMatrix::from_column_slice(2, 1, &[h * s, s]), 1e-14);

    let sgld = AffineStep::probe(&m, IntegratorKind::SgldEuler, d, h).unwrap();
    assert_close(&sgld.a, &DMatrix::from_element(1, 1, 1.0 - h), 1e-14);
    assert_close(&sgld.c, &DMatrix::from_element(1, 1, (2.0 * h).sqrt()), 1e-14);
}

#[test]
fn offset_comes_from_the_data() {
    // grad U = 3 theta - 4 for data [1, 3]
    let m = GaussianConjugateModel::new(vec![1.0, 3.0]);
    let step = AffineStep::probe(&m, IntegratorKind::SgldEuler, 0.0, 0.1).unwrap();
    assert!((step.a[(0, 0)] - 0.7).abs() < 1e-14);
    assert!((step.b[0] - 0.4).abs() < 1e-14);
}

#[test]
fn exact_expectation_matches_closed_form_propagation() {
    // Euler on U = theta^2/2 over three steps, propagated by hand
    let (h, d) = (0.2f64, 1.5);
    let s = (2.0 * d * h).sqrt();
    let a = DMatrix::from_row_slice(2, 2, &[1.0 - h * h, h * (1.0 - d * h), -h, 1.0 - d * h]);
    let c = DVector::from_vec(vec![h * s, s]);
    let mut mean = DVector::from_vec(vec![0.5, -1.0]);
    let mut cov = DMatrix::zeros(2, 2);
    for _ in 0..3 {
        mean = &a * &mean;
        cov = &a * &cov * a.transpose() + &c * c.transpose();
    }
    let expected = cov[(0, 0)] + mean[0] * mean[0];
    let start = State::with_momentum(vec![0.5], vec![-1.0]);
    let got = exact_expectation(&quadratic(), IntegratorKind::SghmcEuler, d, &start, h, 3, TestFunction::ThetaSquared)
        .unwrap();
    assert!((got - expected).abs() < 1e-10);
    let got = exact_expectation(&quadratic(), IntegratorKind::SghmcEuler, d, &start, h, 3, TestFunction::Theta)
        .unwrap();
    assert!((got - mean[0]).abs() < 1e-10);
}

#[test]
fn sgld_one_step_error_against_exact_flow() {
    // exact flow from theta=1: E theta_t^2 = exp(-2t) + 1 - exp(-2t) = 1;
    // one SGLD step gives (1-h)^2 + 2h = 1 + h^2
    for h in [0.4, 0.2, 0.1] {
        let e = exact_expectation(
            &quadratic(),
            IntegratorKind::SgldEuler,
            0.0,
            &State::position(vec![1.0]),
            h,
            1,
            TestFunction::ThetaSquared,
        )
        .unwrap();
        assert!((e - (1.0 + h * h)).abs() < 1e-14);
    }
}

#[test]
fn self_comparison_has_zero_error() {
    let mut cfg = WeakOrderConfig::new(
        IntegratorKind::SghmcAboba,
        1.0,
        State::with_momentum(vec![0.5], vec![-1.0]),
    );
    cfg.reference = Reference { kind: IntegratorKind::SghmcAboba, substeps: 1 };
    let report = weak_order_estimate(&quadratic(), &cfg, &[0.4, 0.2, 0.1, 0.05]).unwrap();
    assert!(report.errors.iter().all(|&(_, e)| e == 0.0));
    assert!(report.slope().is_none());
}

fn slope(kind: IntegratorKind, start: State, grid: &[f64]) -> f64 {
    let cfg = WeakOrderConfig::new(kind, 1.0, start);
    weak_order_estimate(&quadratic(), &cfg, grid).unwrap().slope().unwrap()
}

#[test]
fn local_orders_from_a_generic_start() {
    let grid = [0.2, 0.1, 0.05, 0.025];
    let start = || State::with_momentum(vec![0.5], vec![-1.0]);
    let euler = slope(IntegratorKind::SghmcEuler, start(), &grid);
    let aboba = slope(IntegratorKind::SghmcAboba, start(), &grid);
    let sgld = slope(IntegratorKind::SgldEuler, State::position(vec![0.5]), &grid);
    assert!((1.6..=2.4).contains(&euler), "euler {euler}");
    assert!((2.5..=3.5).contains(&aboba), "aboba {aboba}");
    assert!((1.6..=2.4).contains(&sgld), "sgld {sgld}");
}

#[test]
fn degenerate_start_flattens_the_leading_terms() {
    // At theta=1, p=0, D=1 the leading error coefficient of ABOBA vanishes
    // and the Euler coefficient is small, so the coarse-grid slopes drift
    // away from K+1.
    let grid = [0.4, 0.2, 0.1, 0.05];
    let start = || State::with_momentum(vec![1.0], vec![0.0]);
    let euler = slope(IntegratorKind::SghmcEuler, start(), &grid);
    let aboba = slope(IntegratorKind::SghmcAboba, start(), &grid);
    assert!((euler - 1.598).abs() < 0.01, "euler {euler}");
    assert!((aboba - 3.849).abs() < 0.01, "aboba {aboba}");
}

#[test]
fn thermostat_is_not_affine() {
    let cfg = WeakOrderConfig::new(
        IntegratorKind::Sgnht,
        1.0,
        State::with_thermostat(vec![0.5], vec![-1.0], 1.0),
    );
    assert!(matches!(
        weak_order_estimate(&quadratic(), &cfg, &[0.2, 0.1, 0.05]),
        Err(WeakOrderError::NotAffine { .. })
    ));
}

#[test]
fn monte_carlo_agrees_with_exact() {
    let grid = [0.4, 0.3, 0.2];
    let mut cfg = WeakOrderConfig::new(IntegratorKind::SgldEuler, 0.0, State::position(vec![1.0]));
    cfg.reference = Reference { kind: IntegratorKind::SgldEuler, substeps: 50 };
    let exact = weak_order_estimate(&quadratic(), &cfg, &grid).unwrap();
    cfg.expectation = Expectation::MonteCarlo { samples: 200_000, seed: 9 };
    let mc = weak_order_estimate(&quadratic(), &cfg, &grid).unwrap();
    for ((h, e), (_, m)) in exact.errors.iter().zip(&mc.errors) {
        assert!((e - m).abs() < 0.02, "h={h}: exact {e}, mc {m}");
    }
}

#[test]
fn sgnht_monte_carlo_runs() {
    let mut cfg = WeakOrderConfig::new(
        IntegratorKind::Sgnht,
        1.0,
        State::with_thermostat(vec![0.5], vec![-1.0], 1.0),
    );
    cfg.reference = Reference { kind: IntegratorKind::Sgnht, substeps: 20 };
    cfg.expectation = Expectation::MonteCarlo { samples: 2_000, seed: 1 };
    let report = weak_order_estimate(&quadratic(), &cfg, &[0.2, 0.1, 0.05]).unwrap();
    assert_eq!(report.errors.len(), 3);
    assert!(report.errors.iter().all(|(_, e)| e.is_finite()));
}

#[test]
fn setup_errors() {
    let cfg = WeakOrderConfig::new(
        IntegratorKind::SghmcEuler,
        1.0,
        State::with_momentum(vec![0.5], vec![-1.0]),
    );
    assert!(matches!(
        weak_order_estimate(&quadratic(), &cfg, &[0.2, 0.1]),
        Err(WeakOrderError::TooFewSteps(2))
    ));
    let mut bad = cfg.clone();
    bad.reference = Reference { kind: IntegratorKind::SgldEuler, substeps: 10 };
    assert!(weak_order_estimate(&quadratic(), &bad, &[0.2, 0.1, 0.05]).is_err());
}
