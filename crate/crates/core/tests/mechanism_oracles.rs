mod common;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use sma_core::conditional::{ConditionalSupport, KernelForm, Smoother, UnitLaw};
use sma_core::dgp::apply_missingness;
use sma_core::kernel::KernelConfig;
use sma_core::logistic::fit_logistic;
use sma_core::mechanism::*;
use sma_core::rng::stream;
use sma_core::sampling::{m1_sampled, sample_conditional, SamplerConfig};
use sma_core::screening::NestedCandidates;
use sma_core::sir::{default_slices, sir_basis, DEFAULT_SIR_DIM};
use sma_core::{Dataset, SimplexWeights};

fn random_logistic(n: usize, seed: u64) -> (DMatrix<f64>, Vec<bool>, Vec<f64>) {
    let mut rng = stream(seed, &[]);
    let x = DMatrix::from_fn(n, 3, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let offset: Vec<f64> = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let r: Vec<bool> = (0..n)
        .map(|i| {
            let eta = -0.4 + 0.8 * x[(i, 1)] - 0.5 * x[(i, 2)] + offset[i];
            rng.random::<f64>() >= 1.0 / (1.0 + (-eta).exp())
        })
        .collect();
    (x, r, offset)
}

#[test]
fn inner_solver_matches_irls() {
    let (x, r, offset) = random_logistic(400, 1);
    let fit = fit_logistic(&x, &r, &offset, None, 0.0, 100).unwrap();
    let (oracle, _) = common::irls_logistic(&x, &r, &offset);
    assert!(fit.converged);
    for (a, b) in fit.coef.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn candidate_nll_matches_offset_logistic() {
    let (d, _) = common::draw_case_a(150, 10, 3);
    let m1: Vec<f64> = (0..150).map(|i| (i as f64 * 0.37).sin()).collect();
    let params = MechanismParams { indices: vec![0, 1, 4], phi: vec![-0.3, 0.7, -1.1, 0.2], gamma: 0.8 };
    let mut oracle = 0.0;
    for i in 0..150 {
        let eta = -0.3 + 0.7 * d.x_at(i, 0) - 1.1 * d.x_at(i, 1) + 0.2 * d.x_at(i, 4) + m1[i];
        let rm1 = if d.r()[i] { 0.0 } else { -1.0 };
        oracle += rm1 * eta + (1.0 + eta.exp()).ln();
    }
    oracle /= 150.0;
    assert!((candidate_nll(&d, &params, &m1) - oracle).abs() < 1e-10);
}

#[test]
fn zero_gamma_on_draws_is_plain_logistic() {
    // log-mean-exp(0 * y) is identically zero, so the profile fit at gamma = 0
    // must coincide with the ordinary logistic MLE.
    let (d, _) = common::draw_case_a(300, 10, 5);
    let units = (0..d.n())
        .map(|i| UnitLaw { values: vec![i as f64, -1.0, 3.5], logw: vec![-(3f64).ln(); 3], offset: 0.0 })
        .collect();
    let support = ConditionalSupport { backend: sma_core::conditional::Backend::Sampled, units };
    let cfg = MechanismConfig { fixed_gamma: Some(0.0), ..Default::default() };
    let fit = fit_mechanism_candidate(&d, &mut M1Source::new(&support), &[0, 1], &cfg).unwrap();
    let (oracle, _) = common::irls_logistic(&design_matrix(&d, &[0, 1]), d.r(), &vec![0.0; d.n()]);
    for (a, b) in fit.params.phi.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

fn mar_fit(form: KernelForm) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (spec, mut truth) = common::case_a(2000, 40);
    truth.mechanism.y_coef = 0.0;
    let mut rng = stream(17, &[]);
    let (x, y, _) = spec.draw(&truth, 2000, &mut rng);
    let d = apply_missingness(&Dataset::complete(x, y).unwrap(), &truth.mechanism, &mut rng).unwrap();
    let idx: Vec<usize> = (0..d.p()).collect();
    let basis = sir_basis(&d, &idx, DEFAULT_SIR_DIM, default_slices(d.respondent_count())).unwrap();
    let sm = Smoother::new(&d, &basis, &KernelConfig::default()).unwrap();
    let support = ConditionalSupport::kernel_with_form(&d, &sm, form).unwrap();
    let cfg = MechanismConfig { fixed_gamma: Some(0.0), ..Default::default() };
    let fit = fit_mechanism_candidate(&d, &mut M1Source::new(&support), &[0, 1], &cfg).unwrap();
    let (oracle, info) = common::irls_logistic(&design_matrix(&d, &[0, 1]), d.r(), &vec![0.0; d.n()]);
    let cov = info.try_inverse().unwrap();
    let se = (0..3).map(|k| cov[(k, k)].sqrt()).collect();
    (fit.params.phi, oracle, se)
}

#[test]
fn mar_conditional_kernel_is_plain_logistic() {
    let (phi, oracle, _) = mar_fit(KernelForm::Conditional);
    for (a, b) in phi.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
#[ignore = "the literal kernel form adds log(local rate / overall rate), which biases phi under MAR"]
fn mar_literal_kernel_within_two_se() {
    let (phi, oracle, se) = mar_fit(KernelForm::Literal);
    for k in 0..3 {
        assert!((phi[k] - oracle[k]).abs() < 2.0 * se[k], "coef {k}: {} vs {} (se {})", phi[k], oracle[k], se[k]);
    }
}

fn toy_fits(seed: u64) -> (Dataset, ConditionalSupport, Vec<CandidateMechanism>) {
    let (d, _) = common::draw_case_a(200, 10, seed);
    let support = common::kernel_support(&d);
    let cfg = MechanismConfig { grid_points: 11, ..Default::default() };
    let mut src = M1Source::new(&support);
    let fits = [vec![0], vec![0, 1], vec![0, 1, 4]]
        .iter()
        .map(|s| fit_mechanism_candidate(&d, &mut src, s, &cfg).unwrap())
        .collect();
    (d, support, fits)
}

#[test]
fn sl_at_vertex_equals_fitted_likelihood() {
    let (d, support, fits) = toy_fits(21);
    let lambda = 3.0;
    for (k, f) in fits.iter().enumerate() {
        let sl = sl_criterion(&d, &support, &fits, &SimplexWeights::vertex(3, k), lambda);
        let expect = -(d.n() as f64) * f.nll - lambda * f.params.indices.len() as f64;
        assert!((sl - expect).abs() < 1e-8 * (1.0 + expect.abs()), "{sl} vs {expect}");

        let m1 = support.m1_all(f.params.gamma);
        let direct: f64 = (0..d.n())
            .map(|i| {
                let eta = f.params.linear(&d, i) + m1[i];
                let rm1 = if d.r()[i] { 0.0 } else { -1.0 };
                -(rm1 * eta + (1.0 + eta.exp()).ln())
            })
            .sum::<f64>()
            - lambda * f.params.indices.len() as f64;
        assert!((sl - direct).abs() < 1e-10 * (1.0 + direct.abs()));
    }
}

#[test]
fn vertex_penalty_difference_is_exact() {
    let (d, support, fits) = toy_fits(22);
    let base = &fits[0].params;
    let mut padded = base.clone();
    padded.indices = vec![0, 1, 4];
    padded.phi = vec![base.phi[0], base.phi[1], 0.0, 0.0];
    let pair = vec![fits[0].clone(), CandidateMechanism { params: padded, converged: true, nll: fits[0].nll }];
    let lambda = 7.5;
    let a = sl_criterion(&d, &support, &pair, &SimplexWeights::vertex(2, 0), lambda);
    let b = sl_criterion(&d, &support, &pair, &SimplexWeights::vertex(2, 1), lambda);
    assert!((a - b - 2.0 * lambda).abs() < 1e-9 * (1.0 + a.abs()));

    let heavy = SlCriterion::new(&d, &support, &pair, 1e9);
    assert_eq!(optimize_mechanism_weights(&heavy).as_slice(), &[1.0, 0.0]);
}

#[test]
fn optimizer_matches_grid_on_three_candidates() {
    for seed in [31, 32, 33] {
        let (d, support, fits) = toy_fits(seed);
        for lambda in [0.0, 2.0, (200f64).ln()] {
            let crit = SlCriterion::new(&d, &support, &fits, lambda);
            let w = optimize_mechanism_weights(&crit);
            let got = crit.eval(w.as_slice());
            let (_, neg) = common::simplex_grid_min(3, 0.05, |w| -crit.eval(w));
            assert!(got >= -neg - 1e-3, "seed {seed} lambda {lambda}: {got} < {}", -neg);
        }
    }
}

#[test]
fn penalty_ladder_shrinks_weighted_size() {
    for seed in [41, 42] {
        let (d, support, fits) = toy_fits(seed);
        let sizes: Vec<f64> = fits.iter().map(|f| f.params.indices.len() as f64).collect();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 1e9] {
            let w = optimize_mechanism_weights(&SlCriterion::new(&d, &support, &fits, lambda));
            let size: f64 = w.as_slice().iter().zip(&sizes).map(|(a, b)| a * b).sum();
            assert!(size <= last + 1e-6, "seed {seed} lambda {lambda}: {size} > {last}");
            last = size;
        }
        assert!((last - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kernel_and_sampled_m1_agree() {
    let (d, _) = common::draw_case_a(300, 40, 51);
    let idx: Vec<usize> = (0..d.p()).collect();
    let basis = sir_basis(&d, &idx, DEFAULT_SIR_DIM, default_slices(d.respondent_count())).unwrap();
    let kcfg = KernelConfig::default();
    let sm = Smoother::new(&d, &basis, &kcfg).unwrap();
    let kernel = ConditionalSupport::kernel_with_form(&d, &sm, KernelForm::Conditional).unwrap();
    let draws = sample_conditional(&d, &basis, &SamplerConfig { seed: 9, total_iterations: 4000, keep_last: 2000, ..Default::default() }, &kcfg).unwrap();
    let gap: f64 = (0..d.n())
        .map(|i| (kernel.m1(i, 1.0) - m1_sampled(&draws.draws[i], 1.0)).abs())
        .sum::<f64>()
        / d.n() as f64;
    assert!(gap < 0.2, "mean |kernel - sampled| = {gap}");
}

fn oc_error(p: &MechanismParams) -> f64 {
    let t = [-1.0, 1.0, -1.0];
    let s: f64 = p.phi.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + (p.gamma - 1.0).powi(2);
    s.sqrt()
}

#[test]
fn profile_fit_recovers_truth_with_exact_conditional() {
    let mut total = 0.0;
    for rep in 0..2 {
        let (d, truth) = common::draw_case_a(2000, 40, 60 + rep);
        let mut rng = stream(61, &[rep]);
        let support = common::exact_respondent_support(&d, &truth, 200, &mut rng);
        let fit = fit_mechanism_candidate(&d, &mut M1Source::new(&support), &[0, 1], &MechanismConfig::default()).unwrap();
        total += oc_error(&fit.params);
    }
    assert!(total / 2.0 < 0.3, "mean error {}", total / 2.0);
}

#[test]
fn nested_fit_reports_consistent_pieces() {
    let (d, support, _) = toy_fits(71);
    let cands = NestedCandidates::new(vec![vec![0], vec![0, 1], vec![0, 1, 4]]).unwrap();
    let fit = fit_mechanism(&d, &support, &cands, &(0..10).collect::<Vec<_>>(), &MechanismConfig::default()).unwrap();
    assert!((fit.lambda_n - (200f64).ln()).abs() < 1e-12);
    assert!(!fit.identifiability_warning);
    assert_eq!(fit.combined.indices, vec![0, 1, 4]);
    assert_eq!(fit.combined, combine_theta(&fit.per_candidate, &fit.weights).unwrap());
}

#[test]
#[ignore = "50 replications at n = 2000; run with --ignored"]
fn kernel_oc_fit_accuracy_at_2000() {
    let reps = 50;
    let mut total = 0.0;
    for rep in 0..reps {
        let (d, _) = common::draw_case_a(2000, 40, 1000 + rep);
        let support = common::kernel_support(&d);
        let fit = fit_mechanism_candidate(&d, &mut M1Source::new(&support), &[0, 1], &MechanismConfig::default()).unwrap();
        total += oc_error(&fit.params);
    }
    let mean = total / reps as f64;
    println!("kernel OC mean error at n = 2000: {mean:.3}");
    assert!(mean < 0.3, "mean error {mean}");
}
