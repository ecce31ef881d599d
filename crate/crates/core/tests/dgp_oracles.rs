use nalgebra::DMatrix;
use proptest::prelude::*;
use sma_core::dgp::*;
use sma_core::rng::stream;
use sma_core::Dataset;

fn main_spec(n: usize, p: usize, scenario: Scenario, mechanism: MechanismCase, r2: f64) -> DgpSpec {
    DgpSpec { n, p, design: Design::Main { scenario, mechanism, r_squared: r2 }, tau: 0.5 }
}

fn var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn realized_r_squared_matches_the_target() {
    for scenario in [Scenario::Heteroskedastic, Scenario::Homoscedastic] {
        for r2 in [0.3, 0.5, 0.7] {
            let s = main_spec(100, 40, scenario, MechanismCase::Logistic, r2);
            let t = s.truth().unwrap();
            let n = 200_000;
            let (_, y, eps) = s.draw(&t, n, &mut stream(17, &[(r2 * 10.0) as u64]));
            let signal: Vec<f64> = y.iter().zip(&eps).map(|(a, e)| a - e).collect();
            let got = var(&signal) / (var(&signal) + var(&eps));
            assert!((got - r2).abs() < 0.01, "{scenario:?} R2 {r2}: {got}");
        }
    }
}

#[test]
fn missing_rates_fall_in_the_target_band() {
    let mut specs = Vec::new();
    for scenario in [Scenario::Heteroskedastic, Scenario::Homoscedastic] {
        for case in [MechanismCase::Logistic, MechanismCase::LogLog] {
            for r2 in [0.3, 0.5] {
                specs.push(main_spec(100, 400, scenario, case, r2));
            }
        }
    }
    for structure in [CovStructure::Autoregressive, CovStructure::CompoundSymmetric] {
        specs.push(DgpSpec { n: 100, p: 300, design: Design::Correlated { rho: 0.5, structure }, tau: 0.5 });
    }
    for s in specs {
        let t = s.truth().unwrap();
        let mut rng = stream(23, &[]);
        let (x, y, _) = s.draw(&t, 20_000, &mut rng);
        let d = apply_missingness(&Dataset::complete(x, y).unwrap(), &t.mechanism, &mut rng).unwrap();
        assert!((0.28..=0.40).contains(&d.missing_rate()), "{:?}: {}", s.design, d.missing_rate());
    }
}

#[test]
fn logistic_response_probability_at_the_origin() {
    let s = main_spec(100, 40, Scenario::Homoscedastic, MechanismCase::Logistic, 0.5);
    let m = s.truth().unwrap().mechanism;
    let x = DMatrix::zeros(1, 40);
    let want = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((m.response_prob(&x, 0, 0.0) - want).abs() < 1e-15);
}

#[test]
fn loglog_link_limits() {
    let s = main_spec(100, 40, Scenario::Homoscedastic, MechanismCase::LogLog, 0.5);
    let m = s.truth().unwrap().mechanism;
    let mut x = DMatrix::zeros(1, 40);
    x[(0, 0)] = -60.0;
    assert!(m.response_prob(&x, 0, 0.0) < 1e-12);
    x[(0, 0)] = 60.0;
    assert!(m.response_prob(&x, 0, 0.0) == 1.0);
}

#[test]
fn autoregressive_covariance_is_positive_definite_with_geometric_lags() {
    let p = 300;
    let sigma = DMatrix::from_fn(p, p, |j, k| 0.5f64.powi((j as i32 - k as i32).abs()));
    assert!(sigma.clone().cholesky().is_some());
    let s = DgpSpec { n: 100, p, design: Design::Correlated { rho: 0.5, structure: CovStructure::Autoregressive }, tau: 0.5 };
    let (x, _, _) = s.draw(&s.truth().unwrap(), 20_000, &mut stream(29, &[]));
    for lag in 0..4 {
        let c = (0..20_000).map(|i| x[(i, 100)] * x[(i, 100 + lag)]).sum::<f64>() / 20_000.0;
        assert!((c - sigma[(100, 100 + lag)]).abs() < 0.03, "lag {lag}: {c}");
    }
}

proptest! {
    #[test]
    fn probabilities_and_odds_agree(
        loglog in any::<bool>(),
        x0 in -4.0f64..4.0,
        x1 in -4.0f64..4.0,
        y in -6.0f64..6.0,
    ) {
        let case = if loglog { MechanismCase::LogLog } else { MechanismCase::Logistic };
        let m = main_spec(100, 40, Scenario::Heteroskedastic, case, 0.3).truth().unwrap().mechanism;
        let mut x = DMatrix::zeros(1, 40);
        x[(0, 0)] = x0;
        x[(0, 1)] = x1;
        let pi = m.response_prob(&x, 0, y);
        prop_assert!((0.0..=1.0).contains(&pi));
        // the naive odds lose precision as pi approaches 1
        if pi > 1e-4 && pi < 1.0 - 1e-4 {
            prop_assert!((m.log_odds(&x, 0, y) - ((1.0 - pi) / pi).ln()).abs() < 1e-8);
        }
    }
}
