//! Candidate quantile fits under nonresponse, the penalized averaging
//! criterion and prediction.
//!
//! A nonrespondent contributes the tilted conditional risk
//! `M0(x_i) = sum_l w_il rho_tau(v_l - fitted_i)`, which is a weighted set of
//! pseudo-observations. Both the candidate fits and the weight choice are
//! therefore weighted check-loss problems solved exactly by [`crate::qreg`].

use crate::conditional::TiltedLaw;
use crate::data::Dataset;
use crate::error::{Result, SmaError};
use crate::loss::{check_loss_raw, QuantileLevel};
use crate::mechanism::tie_break;
use crate::qreg::{minimize_on_simplex, CheckLossProblem};
use crate::screening::NestedCandidates;
use crate::simplex::SimplexWeights;

/// Pseudo-observations lighter than this fraction of a unit's mass are left
/// out of the programs.
const MIN_PSEUDO_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqfConfig {
    /// Penalty `phi_n`; `None` means `log n`.
    pub phi_n: Option<f64>,
    pub beta_cap: f64,
}

impl Default for CqfConfig {
    fn default() -> Self {
        Self { phi_n: None, beta_cap: 100.0 }
    }
}

impl CqfConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.phi_n {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SmaError::Config(format!("phi_n must be nonnegative, got {v}")));
            }
        }
        if !(self.beta_cap > 0.0) {
            return Err(SmaError::Config("beta_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn phi_for(&self, n: usize) -> f64 {
        self.phi_n.unwrap_or_else(|| (n as f64).ln())
    }
}

/// Linear quantile coefficients on `indices`, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct CqfParams {
    pub indices: Vec<usize>,
    pub beta: Vec<f64>,
}

impl CqfParams {
    pub fn fitted(&self, data: &Dataset, i: usize) -> f64 {
        self.beta[0] + self.indices.iter().zip(&self.beta[1..]).map(|(&j, b)| b * data.x_at(i, j)).sum::<f64>()
    }

    pub fn predict(&self, x_new: &[f64]) -> f64 {
        self.beta[0] + self.indices.iter().zip(&self.beta[1..]).map(|(&j, b)| b * x_new[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCqf {
    pub params: CqfParams,
    /// Fitting objective at the returned coefficients.
    pub objective: f64,
    pub converged: bool,
    /// Set when the solution was shrunk onto the `beta_cap` ball.
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqfFit {
    pub candidates: NestedCandidates,
    pub per_candidate: Vec<CandidateCqf>,
    pub weights: SimplexWeights,
    pub tau: QuantileLevel,
    pub phi_n: f64,
}

impl CqfFit {
    pub fn predict(&self, x_new: &[f64]) -> Result<f64> {
        predict_cqf(self, x_new)
    }
}

fn check_law(data: &Dataset, law: &TiltedLaw) -> Result<()> {
    if law.units.len() != data.n() {
        return Err(SmaError::Dimension { expected: data.n(), got: law.units.len() });
    }
    Ok(())
}

/// `n^-1 sum [r_i rho(y_i - b'x_i) + (1 - r_i) M0(x_i; b)]`.
pub fn cqf_objective(data: &Dataset, law: &TiltedLaw, params: &CqfParams, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    let mut s = 0.0;
    for i in 0..data.n() {
        let f = params.fitted(data, i);
        s += if data.r()[i] { check_loss_raw(data.y()[i] - f, t) } else { law.m0(i, f, t) };
    }
    s / data.n() as f64
}

/// Minimizes [`cqf_objective`] over the coefficients of one candidate.
pub fn fit_cqf_candidate(
    data: &Dataset,
    law: &TiltedLaw,
    indices: &[usize],
    tau: QuantileLevel,
    cfg: &CqfConfig,
) -> Result<CandidateCqf> {
    cfg.validate()?;
    check_law(data, law)?;
    if let Some(&j) = indices.iter().find(|&&j| j >= data.p()) {
        return Err(SmaError::Dimension { expected: data.p(), got: j + 1 });
    }
    let (beta, converged, capped) = solve_rows(data, &pseudo_rows(data, law), indices, tau, cfg)?;
    let params = CqfParams { indices: indices.to_vec(), beta };
    let objective = cqf_objective(data, law, &params, tau);
    Ok(CandidateCqf { params, objective, converged, capped })
}

/// Weighted check-loss fit of one candidate on arbitrary rows `(unit, value, c)`.
pub fn fit_candidate_on_rows(
    data: &Dataset,
    rows: &[(usize, f64, f64)],
    indices: &[usize],
    tau: QuantileLevel,
    cfg: &CqfConfig,
) -> Result<CandidateCqf> {
    cfg.validate()?;
    if let Some(&j) = indices.iter().find(|&&j| j >= data.p()) {
        return Err(SmaError::Dimension { expected: data.p(), got: j + 1 });
    }
    let (beta, converged, capped) = solve_rows(data, rows, indices, tau, cfg)?;
    let params = CqfParams { indices: indices.to_vec(), beta };
    let t = tau.value();
    let objective = rows.iter().map(|&(i, v, c)| c * check_loss_raw(v - params.fitted(data, i), t)).sum();
    Ok(CandidateCqf { params, objective, converged, capped })
}

fn solve_rows(
    data: &Dataset,
    rows: &[(usize, f64, f64)],
    indices: &[usize],
    tau: QuantileLevel,
    cfg: &CqfConfig,
) -> Result<(Vec<f64>, bool, bool)> {
    let q = indices.len() + 1;
    let mut prob = CheckLossProblem::with_capacity(q, rows.len());
    let mut x = Vec::with_capacity(q);
    for &(i, v, c) in rows {
        data.design_row(i, indices, &mut x);
        prob.push(&x, v, c, tau.value());
    }
    let sol = prob.solve(None)?;
    let mut beta = sol.beta;
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    let capped = norm > cfg.beta_cap;
    if capped {
        log::warn!("candidate {indices:?}: |beta| = {norm:.3e} exceeds the cap; shrinking");
        beta.iter_mut().for_each(|b| *b *= cfg.beta_cap / norm);
    }
    Ok((beta, sol.converged, capped))
}

/// The averaging criterion with candidate predictions precomputed, stored
/// as weighted rows `(unit, value, c)` contributing `c rho(value - mu_i'w)`.
pub struct QlCriterion {
    /// `mu[i][m]`: candidate `m`'s fitted value at unit `i`.
    mu: Vec<Vec<f64>>,
    rows: Vec<(usize, f64, f64)>,
    sizes: Vec<usize>,
    n: usize,
    tau: f64,
    phi_n: f64,
}

/// Respondents at `1/n`, nonrespondents' tilted pseudo-observations at `w/n`.
pub fn pseudo_rows(data: &Dataset, law: &TiltedLaw) -> Vec<(usize, f64, f64)> {
    let n = data.n() as f64;
    let mut rows = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        if data.r()[i] {
            rows.push((i, data.y()[i], 1.0 / n));
        } else {
            rows.extend(law.units[i].iter().filter(|(_, w)| *w > MIN_PSEUDO_WEIGHT).map(|&(v, w)| (i, v, w / n)));
        }
    }
    rows
}

impl QlCriterion {
    pub fn new(data: &Dataset, law: &TiltedLaw, fits: &[CandidateCqf], tau: QuantileLevel, phi_n: f64) -> Self {
        let mu = (0..data.n()).map(|i| fits.iter().map(|f| f.params.fitted(data, i)).collect()).collect();
        let sizes = fits.iter().map(|f| f.params.indices.len()).collect();
        Self::from_rows(mu, pseudo_rows(data, law), sizes, tau, phi_n)
    }

    /// General form: `sum c rho(v - mu_i'w) + (phi_n / n) sum w_m |I_m|`, with
    /// `n = mu.len()`.
    pub fn from_rows(
        mu: Vec<Vec<f64>>,
        rows: Vec<(usize, f64, f64)>,
        sizes: Vec<usize>,
        tau: QuantileLevel,
        phi_n: f64,
    ) -> Self {
        let n = mu.len();
        Self { mu, rows, sizes, n, tau: tau.value(), phi_n }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let fitted: Vec<f64> = self.mu.iter().map(|m| m.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
        let s: f64 = self.rows.iter().map(|&(i, v, c)| c * check_loss_raw(v - fitted[i], self.tau)).sum();
        let pen: f64 = w.iter().zip(&self.sizes).map(|(a, &b)| a * b as f64).sum();
        s + self.phi_n / self.n as f64 * pen
    }

    fn program(&self) -> CheckLossProblem {
        let mut prob = CheckLossProblem::with_capacity(self.sizes.len(), self.rows.len());
        for &(i, v, c) in &self.rows {
            prob.push(&self.mu[i], v, c, self.tau);
        }
        prob
    }
}

pub fn ql_criterion(
    data: &Dataset,
    law: &TiltedLaw,
    fits: &[CandidateCqf],
    weights: &SimplexWeights,
    tau: QuantileLevel,
    phi_n: f64,
) -> f64 {
    QlCriterion::new(data, law, fits, tau, phi_n).eval(weights.as_slice())
}

/// Minimizes the criterion over the simplex. The exact program optimum is
/// compared with every vertex and ties are broken as for the mechanism
/// weights.
pub fn optimize_cqf_weights(crit: &QlCriterion) -> Result<SimplexWeights> {
    let s = crit.sizes.len();
    if s == 0 {
        return Err(SmaError::Empty("no quantile candidates"));
    }
    if s == 1 {
        return Ok(SimplexWeights::vertex(1, 0));
    }
    let n = crit.n as f64;
    let pen: Vec<f64> = crit.sizes.iter().map(|&k| crit.phi_n / n * k as f64).collect();
    let mut cands: Vec<(Vec<f64>, f64)> =
        (0..s).map(|k| SimplexWeights::vertex(s, k).into_vec()).map(|w| { let v = -crit.eval(&w); (w, v) }).collect();
    match minimize_on_simplex(crit.program(), &pen, None) {
        Ok((w, converged)) => {
            if !converged {
                log::warn!("weight program stopped before certifying optimality");
            }
            let w: Vec<f64> = w.into_iter().map(|a| if a < 1e-12 { 0.0 } else { a }).collect();
            let t: f64 = w.iter().sum();
            let w: Vec<f64> = w.into_iter().map(|a| a / t).collect();
            let v = -crit.eval(&w);
            cands.push((w, v));
        }
        Err(e) => log::warn!("weight program failed ({e}); comparing vertices only"),
    }
    SimplexWeights::renormalized(&tie_break(cands, &crit.sizes))
}

/// Fits every candidate, then chooses the averaging weights.
pub fn fit_cqf(
    data: &Dataset,
    law: &TiltedLaw,
    candidates: &NestedCandidates,
    tau: QuantileLevel,
    cfg: &CqfConfig,
) -> Result<CqfFit> {
    if data.respondent_count() == 0 {
        return Err(SmaError::Data("quantile fits need at least one respondent".into()));
    }
    let per_candidate = candidates
        .index_sets
        .iter()
        .map(|set| fit_cqf_candidate(data, law, set, tau, cfg))
        .collect::<Result<Vec<_>>>()?;
    let phi_n = cfg.phi_for(data.n());
    let weights = optimize_cqf_weights(&QlCriterion::new(data, law, &per_candidate, tau, phi_n))?;
    Ok(CqfFit { candidates: candidates.clone(), per_candidate, weights, tau, phi_n })
}

/// `sum_m w_m beta_m' x^(m)` at a full covariate vector.
pub fn predict_cqf(fit: &CqfFit, x_new: &[f64]) -> Result<f64> {
    let p = fit.per_candidate.iter().flat_map(|c| c.params.indices.iter()).max().map_or(0, |m| m + 1);
    if x_new.len() < p {
        return Err(SmaError::Dimension { expected: p, got: x_new.len() });
    }
    Ok(fit.per_candidate.iter().zip(fit.weights.as_slice()).map(|(c, w)| w * c.params.predict(x_new)).sum())
}

/// Sample analogues of `E rho(eps)` and `E[r rho(eps) + (1 - r) M0(x)]`,
/// where `eps_i = y_i - fitted_i` uses the complete responses.
pub fn check_identity_diagnostic(
    complete_y: &[f64],
    r: &[bool],
    fitted: &[f64],
    law: &TiltedLaw,
    tau: QuantileLevel,
) -> Result<(f64, f64)> {
    let n = complete_y.len();
    if r.len() != n || fitted.len() != n || law.units.len() != n {
        return Err(SmaError::Dimension { expected: n, got: r.len().min(fitted.len()).min(law.units.len()) });
    }
    let t = tau.value();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..n {
        let own = check_loss_raw(complete_y[i] - fitted[i], t);
        lhs += own;
        rhs += if r[i] { own } else { law.m0(i, fitted[i], t) };
    }
    Ok((lhs / n as f64, rhs / n as f64))
}
