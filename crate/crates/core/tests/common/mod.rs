#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sma_core::conditional::{Backend, ConditionalSupport, Smoother, UnitLaw};
use sma_core::dgp::{apply_missingness, Design, DgpSpec, MechanismCase, Scenario, Truth};
use sma_core::kernel::KernelConfig;
use sma_core::rng::stream;
use sma_core::sir::{default_slices, sir_basis, DEFAULT_SIR_DIM};
use sma_core::Dataset;

/// Exact LP optimum of `sum_k c_k rho_tau(y_k - x_k' b)` by enumerating every
/// basic solution (p rows interpolated exactly). The optimum of a bounded LP
/// is attained at one of them.
pub fn vertex_enumeration_optimum(x: &[Vec<f64>], y: &[f64], c: &[f64], tau: f64) -> f64 {
    let p = x[0].len();
    let n = y.len();
    let objective = |b: &[f64]| -> f64 {
        (0..n)
            .map(|k| {
                let u = y[k] - x[k].iter().zip(b).map(|(a, v)| a * v).sum::<f64>();
                c[k] * if u > 0.0 { u * tau } else { u * (tau - 1.0) }
            })
            .sum()
    };
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let a = DMatrix::from_fn(p, p, |r, s| x[idx[r]][s]);
        let rhs = DVector::from_fn(p, |r, _| y[idx[r]]);
        if let Some(sol) = a.lu().solve(&rhs) {
            let b: Vec<f64> = sol.iter().copied().collect();
            if b.iter().all(|v| v.is_finite()) {
                best = best.min(objective(&b));
            }
        }
        // next combination
        let mut i = p;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] != i + n - p {
                break;
            }
            if i == 0 && idx[0] == n - p {
                return best;
            }
        }
        idx[i] += 1;
        for j in i + 1..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Dense grid search over the probability simplex for S <= 3.
pub fn simplex_grid_min(s: usize, step: f64, f: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let k = (1.0 / step).round() as usize;
    let mut best = (vec![], f64::INFINITY);
    match s {
        1 => {
            let w = vec![1.0];
            let v = f(&w);
            best = (w, v);
        }
        2 => {
            for a in 0..=k {
                let w = vec![a as f64 / k as f64, 1.0 - a as f64 / k as f64];
                let v = f(&w);
                if v < best.1 {
                    best = (w, v);
                }
            }
        }
        3 => {
            for a in 0..=k {
                for b in 0..=(k - a) {
                    let w0 = a as f64 / k as f64;
                    let w1 = b as f64 / k as f64;
                    let w = vec![w0, w1, (1.0 - w0 - w1).max(0.0)];
                    let v = f(&w);
                    if v < best.1 {
                        best = (w, v);
                    }
                }
            }
        }
        _ => panic!("grid oracle only supports S <= 3"),
    }
    best
}

/// Exact `y | x, r = 1` draws for a homoscedastic main-design dataset, by
/// rejection from `N(beta'x, 1)` with acceptance `pi(x, y)`.
pub fn exact_respondent_support(
    data: &Dataset,
    truth: &Truth,
    draws: usize,
    rng: &mut impl rand::Rng,
) -> ConditionalSupport {
    let units = (0..data.n())
        .map(|i| {
            let mu: f64 = truth.beta.iter().enumerate().map(|(j, b)| b * data.x_at(i, j)).sum();
            let mut values = Vec::with_capacity(draws);
            while values.len() < draws {
                let y = mu + rng.sample::<f64, _>(rand_distr::StandardNormal);
                if rng.random::<f64>() < truth.mechanism.response_prob(data.x(), i, y) {
                    values.push(y);
                }
            }
            UnitLaw { values, logw: vec![-(draws as f64).ln(); draws], offset: 0.0 }
        })
        .collect();
    ConditionalSupport { backend: Backend::Sampled, units }
}

/// Plain IRLS for logistic regression of `r` on `[1, x]` with a fixed offset.
/// Model: `P(r = 0) = sigmoid(x'b + offset)`.
pub fn irls_logistic(x: &DMatrix<f64>, r: &[bool], offset: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let (n, q) = x.shape();
    let mut b = DVector::zeros(q);
    let mut info = DMatrix::zeros(q, q);
    for _ in 0..100 {
        let mut xtwx = DMatrix::zeros(q, q);
        let mut xtwz = DVector::zeros(q);
        for i in 0..n {
            let row = x.row(i).transpose();
            let eta = row.dot(&b) + offset[i];
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = (p * (1.0 - p)).max(1e-12);
            let target = if r[i] { 0.0 } else { 1.0 };
            let z = eta - offset[i] + (target - p) / w;
            xtwx += &row * row.transpose() * w;
            xtwz += &row * (w * z);
        }
        let next = xtwx.clone().lu().solve(&xtwz).unwrap();
        let done = (&next - &b).amax() < 1e-13;
        b = next;
        info = xtwx;
        if done {
            break;
        }
    }
    (b.iter().copied().collect(), info)
}

/// Scenario II, logistic mechanism, R^2 = 0.5.
pub fn case_a(n: usize, p: usize) -> (DgpSpec, Truth) {
    let spec = DgpSpec {
        n,
        p,
        design: Design::Main { scenario: Scenario::Homoscedastic, mechanism: MechanismCase::Logistic, r_squared: 0.5 },
        tau: 0.5,
    };
    let truth = spec.truth().unwrap();
    (spec, truth)
}

pub fn draw_case_a(n: usize, p: usize, seed: u64) -> (Dataset, Truth) {
    let (spec, truth) = case_a(n, p);
    let mut rng = stream(seed, &[n as u64]);
    let (x, y, _) = spec.draw(&truth, n, &mut rng);
    let full = Dataset::complete(x, y).unwrap();
    (apply_missingness(&full, &truth.mechanism, &mut rng).unwrap(), truth)
}

pub fn kernel_support(d: &Dataset) -> ConditionalSupport {
    let idx: Vec<usize> = (0..d.p()).collect();
    let basis = sir_basis(d, &idx, DEFAULT_SIR_DIM, default_slices(d.respondent_count())).unwrap();
    let sm = Smoother::new(d, &basis, &KernelConfig::default()).unwrap();
    ConditionalSupport::kernel(d, &sm).unwrap()
}

/// Scenario II with the log-log mechanism, R^2 = 0.5.
pub fn draw_case_b(n: usize, p: usize, seed: u64) -> (Dataset, Truth) {
    let spec = DgpSpec {
        n,
        p,
        design: Design::Main { scenario: Scenario::Homoscedastic, mechanism: MechanismCase::LogLog, r_squared: 0.5 },
        tau: 0.5,
    };
    let truth = spec.truth().unwrap();
    let mut rng = stream(seed, &[n as u64, 2]);
    let (x, y, _) = spec.draw(&truth, n, &mut rng);
    let full = Dataset::complete(x, y).unwrap();
    (apply_missingness(&full, &truth.mechanism, &mut rng).unwrap(), truth)
}
