//! Simulation designs: the sparse high-dimensional linear model with
//! homoscedastic or heteroskedastic errors, the correlated-design variant
//! used for post-selection studies, and the nonresponse mechanisms.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Result, SmaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// `eps = e * sum_{last ten} x_j^2 / 8`.
    Heteroskedastic,
    Homoscedastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismCase {
    Logistic,
    LogLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovStructure {
    /// `Sigma_jk = rho^|j-k|`.
    Autoregressive,
    /// `Sigma_jk = rho` off the diagonal, drawn through a common factor.
    CompoundSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    Main { scenario: Scenario, mechanism: MechanismCase, r_squared: f64 },
    /// Correlated covariates, quantile-level dependent coefficients and a
    /// logistic mechanism on `x2, x3, x4, y`.
    Correlated { rho: f64, structure: CovStructure },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// `pi = 1 / (1 + exp(eta))`, `eta` linear in `y`.
    Logit,
    /// `pi = 1 - exp(-exp(eta))`, `eta` carries `x1 * sin(y)`.
    LogLog,
}

/// Nonresponse model `eta = intercept + sum coef_j x_j + y_coef * g(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueMechanism {
    pub link: Link,
    pub intercept: f64,
    pub coefs: Vec<(usize, f64)>,
    pub y_coef: f64,
}

impl TrueMechanism {
    pub fn eta(&self, x: &DMatrix<f64>, i: usize, y: f64) -> f64 {
        let lin: f64 = self.intercept + self.coefs.iter().map(|&(j, c)| c * x[(i, j)]).sum::<f64>();
        match self.link {
            Link::Logit => lin + self.y_coef * y,
            Link::LogLog => lin + self.y_coef * x[(i, 0)] * y.sin(),
        }
    }

    pub fn response_prob(&self, x: &DMatrix<f64>, i: usize, y: f64) -> f64 {
        let eta = self.eta(x, i, y);
        match self.link {
            Link::Logit => 1.0 / (1.0 + eta.exp()),
            Link::LogLog => -(-eta.exp()).exp_m1(),
        }
    }

    /// `log{(1 - pi) / pi}`.
    pub fn log_odds(&self, x: &DMatrix<f64>, i: usize, y: f64) -> f64 {
        let eta = self.eta(x, i, y);
        match self.link {
            Link::Logit => eta,
            Link::LogLog => {
                let u = eta.exp();
                -u - (-(-u).exp_m1()).ln()
            }
        }
    }

    /// Covariates entering the mechanism.
    pub fn covariates(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.coefs.iter().map(|&(j, _)| j).collect();
        if self.link == Link::LogLog && !v.contains(&0) {
            v.push(0);
        }
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Regression coefficients including the signal scale `c`.
    pub beta: Vec<f64>,
    pub c: f64,
    pub mechanism: TrueMechanism,
    /// Covariates with a nonzero coefficient in the outcome or the mechanism.
    pub relevant: Vec<usize>,
}

pub fn main_coefficients(p: usize) -> Vec<f64> {
    let s0 = p / 10;
    (0..p)
        .map(|j| if j < s0 { let k = (j + 1) as f64; if (j + 1) % 2 == 0 { 1.0 / k } else { -1.0 / k } } else { 0.0 })
        .collect()
}

pub fn correlated_coefficients(p: usize, tau: f64) -> Vec<f64> {
    let mut b = vec![0.0; p];
    let a = 8f64.sqrt() * (tau - 0.5).abs();
    let g = 2.0 * (tau - 0.05);
    for (j, v) in [a, 1.0, a, 1.0, a, g, g].into_iter().enumerate().take(p) {
        b[j] = v;
    }
    b
}

/// Error variance of the heteroskedastic scenario: `E[e^2] E[(chi2_10 / 8)^2]`.
pub const HETERO_ERROR_VARIANCE: f64 = (20.0 + 100.0) / 64.0;

/// Signal scale `c` giving population `R^2 = signal / (signal + Var eps)`.
pub fn calibrate_c(beta: &[f64], scenario: Scenario, r_squared: f64) -> Result<f64> {
    if !(r_squared > 0.0 && r_squared < 1.0) {
        return Err(SmaError::Config(format!("R^2 must lie in (0, 1), got {r_squared}")));
    }
    let ss: f64 = beta.iter().map(|b| b * b).sum();
    if ss <= 0.0 {
        return Err(SmaError::Config("no active coefficients; R^2 is unreachable".into()));
    }
    let ve = match scenario {
        Scenario::Homoscedastic => 1.0,
        Scenario::Heteroskedastic => HETERO_ERROR_VARIANCE,
    };
    Ok((r_squared * ve / ((1.0 - r_squared) * ss)).sqrt())
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(SmaError::Config(format!("n must be at least 20, got {}", self.n)));
        }
        match self.design {
            Design::Main { scenario, .. } => {
                if self.p < 10 {
                    return Err(SmaError::Config("the main design needs p >= 10".into()));
                }
                if scenario == Scenario::Heteroskedastic && self.p < 20 {
                    return Err(SmaError::Config("the heteroskedastic design needs p >= 20".into()));
                }
            }
            Design::Correlated { rho, .. } => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(SmaError::Config(format!("rho must lie in [0, 1), got {rho}")));
                }
                if self.p < 7 {
                    return Err(SmaError::Config("the correlated design needs p >= 7".into()));
                }
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(SmaError::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<Truth> {
        self.validate()?;
        let (beta, c, mechanism) = match self.design {
            Design::Main { scenario, mechanism, r_squared } => {
                let b = main_coefficients(self.p);
                let c = calibrate_c(&b, scenario, r_squared)?;
                let (link, theta) = match (mechanism, scenario) {
                    (MechanismCase::Logistic, Scenario::Heteroskedastic) => (Link::Logit, [1.0, -1.0, -1.0, 0.7]),
                    (MechanismCase::Logistic, Scenario::Homoscedastic) => (Link::Logit, [1.0, -1.0, -1.0, 1.0]),
                    (MechanismCase::LogLog, Scenario::Heteroskedastic) => (Link::LogLog, [1.0, -1.0, 0.3, 1.0]),
                    (MechanismCase::LogLog, Scenario::Homoscedastic) => (Link::LogLog, [1.0, -1.0, 0.3, 0.8]),
                };
                let m = TrueMechanism {
                    link,
                    intercept: theta[2],
                    coefs: vec![(0, theta[0]), (1, theta[1])],
                    y_coef: theta[3],
                };
                (b.iter().map(|v| c * v).collect::<Vec<_>>(), c, m)
            }
            Design::Correlated { .. } => {
                let b = correlated_coefficients(self.p, self.tau);
                // logit(pi) = x2 + 1.5 x3 - x4 - y + 1
                let m = TrueMechanism {
                    link: Link::Logit,
                    intercept: -1.0,
                    coefs: vec![(1, -1.0), (2, -1.5), (3, 1.0)],
                    y_coef: 1.0,
                };
                (b, 1.0, m)
            }
        };
        let mut relevant: Vec<usize> = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
        relevant.extend(mechanism.covariates());
        relevant.sort_unstable();
        relevant.dedup();
        Ok(Truth { beta, c, mechanism, relevant })
    }

    /// Complete draws `(x, y, eps)` of size `n` under `truth`.
    pub fn draw(&self, truth: &Truth, n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let x = match self.design {
            Design::Main { .. } => DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal)),
            Design::Correlated { rho, structure: CovStructure::CompoundSymmetric } => {
                let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
                let mut x = DMatrix::zeros(n, p);
                for i in 0..n {
                    let f: f64 = rng.sample(StandardNormal);
                    for j in 0..p {
                        x[(i, j)] = a * f + b * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                x
            }
            Design::Correlated { rho, structure: CovStructure::Autoregressive } => {
                let b = (1.0 - rho * rho).sqrt();
                let mut x = DMatrix::zeros(n, p);
                for i in 0..n {
                    let mut prev: f64 = rng.sample(StandardNormal);
                    x[(i, 0)] = prev;
                    for j in 1..p {
                        prev = rho * prev + b * rng.sample::<f64, _>(StandardNormal);
                        x[(i, j)] = prev;
                    }
                }
                x
            }
        };
        let mut y = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let scale = match self.design {
                Design::Main { scenario: Scenario::Heteroskedastic, .. } => {
                    (p - 10..p).map(|j| x[(i, j)] * x[(i, j)]).sum::<f64>() / 8.0
                }
                _ => 1.0,
            };
            let mu: f64 = truth.beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, b)| b * x[(i, j)]).sum();
            eps.push(e * scale);
            y.push(mu + e * scale);
        }
        (x, y, eps)
    }
}

/// Draws `r_i ~ Bernoulli(pi_i)` and masks nonrespondents.
pub fn apply_missingness(data: &Dataset, mechanism: &TrueMechanism, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let x = data.x();
    let r: Vec<bool> = (0..data.n())
        .map(|i| rng.random::<f64>() < mechanism.response_prob(x, i, data.y()[i]))
        .collect();
    Dataset::new(x.clone(), data.y().to_vec(), r)
}
