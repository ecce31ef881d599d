//! Nonresponse model averaging. Each nested candidate is a logistic model
//! `P(r = 1 | x, y) = 1 / (1 + exp(phi'x + gamma y))` fitted by profiling
//! `gamma`, with the respondents' law entering through `m1(x; gamma)`.
//! Candidates are averaged by maximizing a penalized pseudo log-likelihood.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::conditional::ConditionalSupport;
use crate::data::Dataset;
use crate::error::{Result, SmaError};
use crate::logistic::{fit_logistic, mean_nll, sigmoid, softplus};
use crate::optim::{golden_section, nelder_mead, NelderMeadConfig};
use crate::screening::NestedCandidates;
use crate::simplex::SimplexWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismParams {
    /// Covariates carried by `phi[1..]`; `phi[0]` is the intercept.
    pub indices: Vec<usize>,
    pub phi: Vec<f64>,
    pub gamma: f64,
}

impl MechanismParams {
    pub fn zeros(indices: &[usize]) -> Self {
        Self { indices: indices.to_vec(), phi: vec![0.0; indices.len() + 1], gamma: 0.0 }
    }

    /// `phi'x_i` (without the response term).
    pub fn linear(&self, data: &Dataset, i: usize) -> f64 {
        self.phi[0] + self.indices.iter().zip(&self.phi[1..]).map(|(&j, c)| c * data.x_at(i, j)).sum::<f64>()
    }

    pub fn response_prob(&self, data: &Dataset, i: usize, y: f64) -> f64 {
        1.0 - sigmoid(self.linear(data, i) + self.gamma * y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismConfig {
    pub gamma_cap: f64,
    pub grid_points: usize,
    /// Penalty `lambda_n`; `None` means `log n`.
    pub lambda_n: Option<f64>,
    /// Pins `gamma` instead of profiling it.
    pub fixed_gamma: Option<f64>,
    pub newton_max_iter: usize,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self { gamma_cap: 5.0, grid_points: 41, lambda_n: None, fixed_gamma: None, newton_max_iter: 100 }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_cap > 0.0 && self.gamma_cap.is_finite()) {
            return Err(SmaError::Config("gamma_cap must be positive".into()));
        }
        if self.grid_points < 3 {
            return Err(SmaError::Config("gamma grid needs at least 3 points".into()));
        }
        if let Some(l) = self.lambda_n {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(SmaError::Config(format!("lambda_n must be nonnegative, got {l}")));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda_n.unwrap_or_else(|| (n as f64).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMechanism {
    pub params: MechanismParams,
    pub converged: bool,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismFit {
    pub candidates: NestedCandidates,
    pub per_candidate: Vec<CandidateMechanism>,
    pub weights: SimplexWeights,
    pub combined: MechanismParams,
    pub lambda_n: f64,
    /// Set when the largest candidate uses every covariate that the
    /// respondents' law is smoothed on, leaving no instrument.
    pub identifiability_warning: bool,
}

/// `m1(.; gamma)` for all units with memoization on the exact `gamma`.
pub struct M1Source<'a> {
    support: &'a ConditionalSupport,
    cache: HashMap<u64, Vec<f64>>,
}

impl<'a> M1Source<'a> {
    pub fn new(support: &'a ConditionalSupport) -> Self {
        Self { support, cache: HashMap::new() }
    }

    pub fn support(&self) -> &ConditionalSupport {
        self.support
    }

    pub fn get(&mut self, gamma: f64) -> &[f64] {
        if self.cache.len() > 4096 {
            self.cache.clear();
        }
        self.cache.entry(gamma.to_bits()).or_insert_with(|| self.support.m1_all(gamma))
    }
}

pub fn design_matrix(data: &Dataset, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(data.n(), indices.len() + 1, |i, c| if c == 0 { 1.0 } else { data.x_at(i, indices[c - 1]) })
}

/// `n^-1 sum [(r_i - 1) eta_i + log(1 + exp(eta_i))]`, `eta_i = phi'x_i + m1_i`.
pub fn candidate_nll(data: &Dataset, params: &MechanismParams, m1: &[f64]) -> f64 {
    let eta: Vec<f64> = (0..data.n()).map(|i| params.linear(data, i) + m1[i]).collect();
    mean_nll(&eta, data.r())
}

/// Profile fit: a grid over `[-cap, cap]`, golden-section refinement around
/// the best grid point, and a Newton solve in `phi` for every `gamma` visited.
pub fn fit_mechanism_candidate(
    data: &Dataset,
    source: &mut M1Source,
    indices: &[usize],
    cfg: &MechanismConfig,
) -> Result<CandidateMechanism> {
    cfg.validate()?;
    let x = design_matrix(data, indices);
    let r = data.r();
    let solve = |gamma: f64, start: Option<&[f64]>, source: &mut M1Source| {
        let off = source.get(gamma);
        fit_logistic(&x, r, off, start, 0.0, cfg.newton_max_iter)
    };
    if let Some(g) = cfg.fixed_gamma {
        let f = solve(g, None, source)?;
        return Ok(CandidateMechanism {
            params: MechanismParams { indices: indices.to_vec(), phi: f.coef, gamma: g },
            converged: f.converged,
            nll: f.nll,
        });
    }
    let cap = cfg.gamma_cap;
    let grid: Vec<f64> =
        (0..cfg.grid_points).map(|k| -cap + 2.0 * cap * k as f64 / (cfg.grid_points - 1) as f64).collect();
    // Walk the grid outward from the middle so warm starts stay close.
    let mid = cfg.grid_points / 2;
    let mut fits: Vec<Option<(f64, Vec<f64>, bool)>> = vec![None; grid.len()];
    for run in [(mid..grid.len()).collect::<Vec<_>>(), (0..mid).rev().collect()] {
        let mut warm = fits[mid].as_ref().map(|f| f.1.clone());
        for k in run {
            match solve(grid[k], warm.as_deref(), source) {
                Ok(f) => {
                    warm = Some(f.coef.clone());
                    fits[k] = Some((f.nll, f.coef, f.converged));
                }
                Err(_) => warm = None,
            }
        }
    }
    let best_k = (0..grid.len())
        .filter(|&k| fits[k].is_some())
        .min_by(|&a, &b| fits[a].as_ref().unwrap().0.total_cmp(&fits[b].as_ref().unwrap().0))
        .ok_or_else(|| SmaError::Numerical("every profile fit failed".into()))?;
    let (mut best_nll, mut best_phi, mut best_conv) = fits[best_k].clone().unwrap();
    let mut best_gamma = grid[best_k];

    let lo = grid[best_k.saturating_sub(1)];
    let hi = grid[(best_k + 1).min(grid.len() - 1)];
    let start = best_phi.clone();
    let (g, _) = golden_section(
        |g| solve(g, Some(&start), source).map(|f| f.nll).unwrap_or(f64::INFINITY),
        lo,
        hi,
        1e-6,
        100,
    );
    if let Ok(f) = solve(g, Some(&start), source) {
        if f.nll < best_nll {
            best_nll = f.nll;
            best_phi = f.coef;
            best_conv = f.converged;
            best_gamma = g;
        }
    }
    Ok(CandidateMechanism {
        params: MechanismParams { indices: indices.to_vec(), phi: best_phi, gamma: best_gamma },
        converged: best_conv,
        nll: best_nll,
    })
}

/// Penalized pseudo log-likelihood of a weight vector.
pub struct SlCriterion<'a> {
    r: Vec<bool>,
    /// `phi_k'x_i^(k)` per candidate.
    linear: Vec<Vec<f64>>,
    gammas: Vec<f64>,
    sizes: Vec<usize>,
    lambda_n: f64,
    support: &'a ConditionalSupport,
}

impl<'a> SlCriterion<'a> {
    pub fn new(data: &Dataset, support: &'a ConditionalSupport, fits: &[CandidateMechanism], lambda_n: f64) -> Self {
        Self {
            r: data.r().to_vec(),
            linear: fits.iter().map(|f| (0..data.n()).map(|i| f.params.linear(data, i)).collect()).collect(),
            gammas: fits.iter().map(|f| f.params.gamma).collect(),
            sizes: fits.iter().map(|f| f.params.indices.len()).collect(),
            lambda_n,
            support,
        }
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let gamma: f64 = w.iter().zip(&self.gammas).map(|(a, b)| a * b).sum();
        let m1 = self.support.m1_all(gamma);
        let mut s = 0.0;
        for (i, m) in m1.iter().enumerate() {
            let eta: f64 = m + w.iter().zip(&self.linear).map(|(wk, l)| wk * l[i]).sum::<f64>();
            s += if self.r[i] { -softplus(eta) } else { eta - softplus(eta) };
        }
        let pen: f64 = w.iter().zip(&self.sizes).map(|(a, &b)| a * b as f64).sum();
        s - self.lambda_n * pen
    }
}

pub fn sl_criterion(
    data: &Dataset,
    support: &ConditionalSupport,
    fits: &[CandidateMechanism],
    weights: &SimplexWeights,
    lambda_n: f64,
) -> f64 {
    SlCriterion::new(data, support, fits, lambda_n).eval(weights.as_slice())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Picks the best of `(weights, value)` pairs for a maximization: values
/// within `1e-8` of the best tie, ties go to the smaller weighted size, then
/// to the lexicographically larger weight vector.
pub fn tie_break(cands: Vec<(Vec<f64>, f64)>, sizes: &[usize]) -> Vec<f64> {
    let best = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let size = |w: &[f64]| w.iter().zip(sizes).map(|(a, &b)| a * b as f64).sum::<f64>();
    cands
        .into_iter()
        .filter(|c| c.1 >= best - 1e-8 * (1.0 + best.abs()))
        .min_by(|a, b| {
            size(&a.0)
                .total_cmp(&size(&b.0))
                .then_with(|| b.0.iter().zip(&a.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        })
        .map(|c| c.0)
        .unwrap()
}

/// Maximizes SL over the simplex: Nelder-Mead on softmax logits started near
/// every vertex and at the uniform point, with the exact vertices also
/// compared.
pub fn optimize_mechanism_weights(crit: &SlCriterion) -> SimplexWeights {
    let s = crit.sizes.len();
    if s == 1 {
        return SimplexWeights::vertex(1, 0);
    }
    let mut cands: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..s {
        let w = SimplexWeights::vertex(s, k).into_vec();
        let v = crit.eval(&w);
        cands.push((w, v));
    }
    let nm = NelderMeadConfig { initial_step: 2.0, max_evals: 150 * s, f_tol: 1e-12 };
    let mut starts: Vec<Vec<f64>> = (0..s).map(|k| (0..s).map(|j| if j == k { 4.0 } else { 0.0 }).collect()).collect();
    starts.push(vec![0.0; s]);
    for st in starts {
        let (z, v, _) = nelder_mead(|z| -crit.eval(&softmax(z)), &st, &nm);
        if v.is_finite() {
            // Logits far apart leave weights like 1e-19 that would defeat the
            // tie-break against exact vertices.
            let w: Vec<f64> = softmax(&z).into_iter().map(|a| if a < 1e-12 { 0.0 } else { a }).collect();
            let t: f64 = w.iter().sum();
            let w: Vec<f64> = w.into_iter().map(|a| a / t).collect();
            let v = crit.eval(&w);
            cands.push((w, v));
        }
    }
    let w = tie_break(cands, &crit.sizes);
    SimplexWeights::renormalized(&w).unwrap_or_else(|_| SimplexWeights::vertex(s, 0))
}

/// `theta(omega) = sum_k omega_k (phi_k zero-padded, gamma_k)`.
pub fn combine_theta(fits: &[CandidateMechanism], weights: &SimplexWeights) -> Result<MechanismParams> {
    if fits.len() != weights.len() || fits.is_empty() {
        return Err(SmaError::Dimension { expected: fits.len(), got: weights.len() });
    }
    let largest = fits.iter().max_by_key(|f| f.params.indices.len()).unwrap();
    let indices = largest.params.indices.clone();
    let mut phi = vec![0.0; indices.len() + 1];
    let mut gamma = 0.0;
    for (f, &w) in fits.iter().zip(weights.as_slice()) {
        phi[0] += w * f.params.phi[0];
        for (j, c) in f.params.indices.iter().zip(&f.params.phi[1..]) {
            let pos = indices
                .iter()
                .position(|k| k == j)
                .ok_or_else(|| SmaError::Config("mechanism candidates are not nested".into()))?;
            phi[pos + 1] += w * c;
        }
        gamma += w * f.params.gamma;
    }
    Ok(MechanismParams { indices, phi, gamma })
}

/// End-to-end: fit every candidate, choose weights, combine.
pub fn fit_mechanism(
    data: &Dataset,
    support: &ConditionalSupport,
    candidates: &NestedCandidates,
    smoothing_indices: &[usize],
    cfg: &MechanismConfig,
) -> Result<MechanismFit> {
    data.require_partial_response()?;
    let mut source = M1Source::new(support);
    let mut per_candidate = Vec::with_capacity(candidates.len());
    for set in &candidates.index_sets {
        per_candidate.push(fit_mechanism_candidate(data, &mut source, set, cfg)?);
    }
    if per_candidate.iter().all(|c| !c.converged) {
        log::warn!("no mechanism candidate converged; using best iterates");
    }
    let mut largest: Vec<usize> = candidates.largest().to_vec();
    largest.sort_unstable();
    let mut smooth = smoothing_indices.to_vec();
    smooth.sort_unstable();
    let identifiability_warning = !smooth.is_empty() && smooth.iter().all(|j| largest.binary_search(j).is_ok());
    if identifiability_warning {
        log::debug!("largest mechanism candidate covers every smoothing covariate; no instrument left");
    }
    let lambda_n = cfg.lambda_for(data.n());
    let crit = SlCriterion::new(data, support, &per_candidate, lambda_n);
    let weights = optimize_mechanism_weights(&crit);
    let combined = combine_theta(&per_candidate, &weights)?;
    Ok(MechanismFit { candidates: candidates.clone(), per_candidate, weights, combined, lambda_n, identifiability_warning })
}

/// Average Bernoulli KL divergence `KL(reference || params)` over units,
/// evaluated at each unit's (complete) response.
pub fn kl_diagnostic(data: &Dataset, params: &MechanismParams, reference: &MechanismParams) -> f64 {
    let clip = |p: f64| p.clamp(1e-12, 1.0 - 1e-12);
    let mut s = 0.0;
    for i in 0..data.n() {
        let y = data.y()[i];
        let p0 = clip(reference.response_prob(data, i, y));
        let p1 = clip(params.response_prob(data, i, y));
        s += p0 * (p0 / p1).ln() + (1.0 - p0) * ((1.0 - p0) / (1.0 - p1)).ln();
    }
    s / data.n() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        let x = DMatrix::from_fn(12, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.9).cos()).collect();
        let r: Vec<bool> = (0..12).map(|i| i % 4 != 0).collect();
        Dataset::new(x, y, r).unwrap()
    }

    fn cm(indices: &[usize], phi: Vec<f64>, gamma: f64) -> CandidateMechanism {
        CandidateMechanism { params: MechanismParams { indices: indices.to_vec(), phi, gamma }, converged: true, nll: 0.0 }
    }

    #[test]
    fn zero_parameters_give_log_two() {
        let d = toy();
        let v = candidate_nll(&d, &MechanismParams::zeros(&[0, 1]), &[0.0; 12]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_limit() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let d = Dataset::complete(x, vec![0.0; 5]).unwrap();
        let p = MechanismParams { indices: vec![], phi: vec![-60.0], gamma: 0.0 };
        assert!(candidate_nll(&d, &p, &[0.0; 5]) < 1e-20);
    }

    #[test]
    fn combine_examples() {
        let fits = vec![cm(&[3], vec![0.5, 1.0], 0.2), cm(&[3, 7], vec![1.5, 1.0, 2.0], 1.0)];
        let half = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let c = combine_theta(&fits, &half).unwrap();
        assert_eq!(c.indices, vec![3, 7]);
        assert_eq!(c.phi, vec![1.0, 1.0, 1.0]);
        assert!((c.gamma - 0.6).abs() < 1e-15);
        let v = combine_theta(&fits, &SimplexWeights::vertex(2, 0)).unwrap();
        assert_eq!(v.phi, vec![0.5, 1.0, 0.0]);
    }

    #[test]
    fn tie_break_prefers_small_then_lexicographic() {
        let pick = tie_break(vec![(vec![0.0, 1.0], 3.0), (vec![1.0, 0.0], 3.0 - 1e-12)], &[1, 2]);
        assert_eq!(pick, vec![1.0, 0.0]);
        let pick = tie_break(vec![(vec![0.0, 1.0], 3.0), (vec![1.0, 0.0], 3.0)], &[2, 2]);
        assert_eq!(pick, vec![1.0, 0.0]);
    }

    #[test]
    fn kl_zero_at_reference() {
        let d = toy();
        let p = MechanismParams { indices: vec![0], phi: vec![0.3, -0.2], gamma: 0.7 };
        assert!(kl_diagnostic(&Dataset::complete(d.x().clone(), (0..12).map(|i| i as f64 / 5.0).collect()).unwrap(), &p, &p).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn nll_convex_in_phi(a in prop::collection::vec(-3.0..3.0f64, 3), b in prop::collection::vec(-3.0..3.0f64, 3), t in 0.0..1.0f64, m in prop::collection::vec(-2.0..2.0f64, 12)) {
            let d = toy();
            let pa = MechanismParams { indices: vec![0, 1], phi: a.clone(), gamma: 0.0 };
            let pb = MechanismParams { indices: vec![0, 1], phi: b.clone(), gamma: 0.0 };
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let pm = MechanismParams { indices: vec![0, 1], phi: mid, gamma: 0.0 };
            prop_assert!(candidate_nll(&d, &pm, &m) <= t * candidate_nll(&d, &pa, &m) + (1.0 - t) * candidate_nll(&d, &pb, &m) + 1e-12);
        }

        #[test]
        fn kl_nonnegative(a in prop::collection::vec(-2.0..2.0f64, 2), b in prop::collection::vec(-2.0..2.0f64, 2), ga in -1.0..1.0f64, gb in -1.0..1.0f64) {
            let d = Dataset::complete(toy().x().clone(), (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
            let p = MechanismParams { indices: vec![1], phi: a, gamma: ga };
            let q = MechanismParams { indices: vec![1], phi: b, gamma: gb };
            prop_assert!(kl_diagnostic(&d, &p, &q) >= -1e-12);
        }

        #[test]
        fn combine_is_linear(u in 0.0..1.0f64, v in 0.0..1.0f64, t in 0.0..1.0f64) {
            let fits = vec![cm(&[1], vec![0.5, 1.0], 0.2), cm(&[1, 4], vec![1.5, -1.0, 2.0], 1.0)];
            let w1 = SimplexWeights::new(vec![u, 1.0 - u]).unwrap();
            let w2 = SimplexWeights::new(vec![v, 1.0 - v]).unwrap();
            let wm = SimplexWeights::new(vec![t * u + (1.0 - t) * v, 1.0 - (t * u + (1.0 - t) * v)]).unwrap();
            let (a, b, m) = (combine_theta(&fits, &w1).unwrap(), combine_theta(&fits, &w2).unwrap(), combine_theta(&fits, &wm).unwrap());
            for k in 0..3 {
                prop_assert!((m.phi[k] - (t * a.phi[k] + (1.0 - t) * b.phi[k])).abs() < 1e-12);
            }
            prop_assert!((m.gamma - (t * a.gamma + (1.0 - t) * b.gamma)).abs() < 1e-12);
        }
    }
}
