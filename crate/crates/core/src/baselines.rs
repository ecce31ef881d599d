//! Competing selection and averaging rules: quantile AIC/BIC and their
//! smoothed weights, cross-validated averaging, inverse-probability weighted
//! averaging under MNAR and MAR propensities, and the fit of the true
//! nonresponse family used by the oracle variant.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::conditional::{ConditionalSupport, TiltedLaw};
use crate::cqf::{fit_candidate_on_rows, fit_cqf_candidate, optimize_cqf_weights, pseudo_rows, CandidateCqf, CqfConfig, QlCriterion};
use crate::data::Dataset;
use crate::dgp::TrueMechanism;
use crate::error::{Result, SmaError};
use crate::logistic::{fit_logistic, fit_logistic_l1, mean_nll, sigmoid};
use crate::loss::QuantileLevel;
use crate::mechanism::{design_matrix, CandidateMechanism, MechanismParams};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::rng::stream;
use crate::screening::NestedCandidates;
use crate::simplex::SimplexWeights;

/// Propensities are clipped to `[PI_FLOOR, 1]`.
pub const PI_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Aic,
    Bic,
    Saic,
    Sbic,
    Cvma,
    IpwMnar,
    IpwMar,
    SmaT,
}

impl Method {
    pub const ALL: [Method; 8] =
        [Method::Aic, Method::Bic, Method::Saic, Method::Sbic, Method::Cvma, Method::IpwMnar, Method::IpwMar, Method::SmaT];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aic => "AIC",
            Method::Bic => "BIC",
            Method::Saic => "SAIC",
            Method::Sbic => "SBIC",
            Method::Cvma => "CVMA",
            Method::IpwMnar => "IPW-MNAR",
            Method::IpwMar => "IPW-MAR",
            Method::SmaT => "SMA-T",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub method: Method,
    pub weights: SimplexWeights,
    pub per_candidate_scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    Aic,
    Bic,
}

impl IcKind {
    pub fn penalty(self, n: usize) -> f64 {
        match self {
            IcKind::Aic => 2.0,
            IcKind::Bic => (n as f64).ln(),
        }
    }
}

/// `2n log(G_m) + pen |I_m|`, `G_m` the candidate's fitting objective
/// (clipped at `1e-12`).
pub fn ic_scores(n: usize, fits: &[CandidateCqf], kind: IcKind) -> Vec<f64> {
    let pen = kind.penalty(n);
    fits.iter()
        .map(|f| 2.0 * n as f64 * f.objective.max(1e-12).ln() + pen * f.params.indices.len() as f64)
        .collect()
}

/// `2n nll_k + pen |M_k|` for nonresponse candidates, so that `gamma` can be
/// chosen by the same rule as the quantile model.
pub fn mechanism_ic_scores(n: usize, fits: &[CandidateMechanism], kind: IcKind) -> Vec<f64> {
    let pen = kind.penalty(n);
    fits.iter().map(|f| 2.0 * n as f64 * f.nll + pen * f.params.indices.len() as f64).collect()
}

/// Vertex at the smallest score; ties go to the earlier candidate.
pub fn ic_select(scores: &[f64]) -> Result<SimplexWeights> {
    if scores.is_empty() {
        return Err(SmaError::Empty("no scores"));
    }
    let k = scores.iter().enumerate().fold(0, |b, (k, s)| if *s < scores[b] { k } else { b });
    Ok(SimplexWeights::vertex(scores.len(), k))
}

/// `w_m ∝ exp(-IC_m / 2)`.
pub fn smoothed_ic_weights(scores: &[f64]) -> Result<SimplexWeights> {
    if scores.is_empty() {
        return Err(SmaError::Empty("no scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(SmaError::Numerical("information criterion is not finite".into()));
    }
    let m = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = scores.iter().map(|s| (-(s - m) / 2.0).exp()).collect();
    let t: f64 = e.iter().sum();
    SimplexWeights::new(e.into_iter().map(|v| v / t).collect())
}

/// Deterministic fold labels; folds without respondents are merged into a
/// neighbour. Returns the labels and the number of folds kept.
pub fn assign_folds(r: &[bool], folds: usize, seed: u64) -> Result<(Vec<usize>, usize)> {
    let n = r.len();
    if folds < 2 || n < 2 * folds {
        return Err(SmaError::Config(format!("{folds} folds need n >= {}, got {n}", 2 * folds)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[0xcf]));
    let mut label = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        label[i] = pos % folds;
    }
    let mut k = folds;
    let mut f = 0;
    while f < k && k > 1 {
        if (0..n).any(|i| label[i] == f && r[i]) {
            f += 1;
            continue;
        }
        let into = if f + 1 < k { f + 1 } else { f - 1 };
        log::warn!("fold {f} has no respondents; merged into fold {into}");
        for l in label.iter_mut() {
            if *l == f {
                *l = into;
            }
        }
        for l in label.iter_mut() {
            if *l > f {
                *l -= 1;
            }
        }
        k -= 1;
    }
    Ok((label, k))
}

/// Cross-validated averaging: every candidate is refitted without each fold,
/// the held-out predictions enter the unpenalized criterion, and the pooled
/// criterion is minimized over the simplex.
pub fn cvma_weights(
    data: &Dataset,
    law: &TiltedLaw,
    candidates: &NestedCandidates,
    tau: QuantileLevel,
    folds: usize,
    seed: u64,
    cfg: &CqfConfig,
) -> Result<BaselineResult> {
    let n = data.n();
    let s = candidates.len();
    let (label, k) = assign_folds(data.r(), folds, seed)?;
    let mut mu = vec![vec![0.0; s]; n];
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| label[i] != f).collect();
        let sub = data.subset(&train)?;
        let sub_law = TiltedLaw { units: train.iter().map(|&i| law.units[i].clone()).collect() };
        for (m, set) in candidates.index_sets.iter().enumerate() {
            let fit = fit_cqf_candidate(&sub, &sub_law, set, tau, cfg)?;
            for i in (0..n).filter(|&i| label[i] == f) {
                mu[i][m] = fit.params.fitted(data, i);
            }
        }
    }
    let crit = QlCriterion::from_rows(mu, pseudo_rows(data, law), candidates.sizes(), tau, 0.0);
    let weights = optimize_cqf_weights(&crit)?;
    let scores = (0..s).map(|m| crit.eval(SimplexWeights::vertex(s, m).as_slice())).collect();
    Ok(BaselineResult { method: Method::Cvma, weights, per_candidate_scores: scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpwResult {
    pub weights: SimplexWeights,
    /// Candidates refitted on respondents with weights `1 / pi`.
    pub fits: Vec<CandidateCqf>,
    /// Respondents whose propensity was raised to [`PI_FLOOR`].
    pub clipped: usize,
}

/// Inverse-probability weighted refits and weights given respondents'
/// propensities `pi` (entries for nonrespondents are ignored).
pub fn ipw_weights(
    data: &Dataset,
    pi: &[f64],
    candidates: &NestedCandidates,
    tau: QuantileLevel,
    phi_n: f64,
    cfg: &CqfConfig,
) -> Result<IpwResult> {
    let n = data.n();
    if pi.len() != n {
        return Err(SmaError::Dimension { expected: n, got: pi.len() });
    }
    if data.respondent_count() == 0 {
        return Err(SmaError::Data("inverse-probability weighting needs respondents".into()));
    }
    let mut clipped = 0;
    let mut rows = Vec::with_capacity(data.respondent_count());
    for i in data.respondents() {
        let p = if pi[i].is_nan() { PI_FLOOR } else { pi[i] };
        if p < PI_FLOOR {
            clipped += 1;
        }
        rows.push((i, data.y()[i], 1.0 / (p.clamp(PI_FLOOR, 1.0) * n as f64)));
    }
    if clipped > 0 {
        log::warn!("{clipped} propensities clipped at {PI_FLOOR}");
    }
    let fits = candidates
        .index_sets
        .iter()
        .map(|set| fit_candidate_on_rows(data, &rows, set, tau, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mu = (0..n).map(|i| fits.iter().map(|f| f.params.fitted(data, i)).collect()).collect();
    let crit = QlCriterion::from_rows(mu, rows, candidates.sizes(), tau, phi_n);
    let weights = optimize_cqf_weights(&crit)?;
    Ok(IpwResult { weights, fits, clipped })
}

/// IPW with propensities from an estimated nonresponse model evaluated at
/// the observed responses.
pub fn ipw_mnar_weights(
    data: &Dataset,
    theta: &MechanismParams,
    candidates: &NestedCandidates,
    tau: QuantileLevel,
    phi_n: f64,
    cfg: &CqfConfig,
) -> Result<IpwResult> {
    let pi: Vec<f64> =
        (0..data.n()).map(|i| if data.r()[i] { theta.response_prob(data, i, data.y()[i]) } else { f64::NAN }).collect();
    ipw_weights(data, &pi, candidates, tau, phi_n, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarPropensity {
    pub indices: Vec<usize>,
    /// Intercept first, in the `P(r = 1) = 1 / (1 + exp(x'coef))` form.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub ridge_fallback: bool,
    pub pi: Vec<f64>,
}

const LADDER_POINTS: usize = 10;

/// L1-penalized logistic propensity on `indices`, tuned by BIC over a
/// geometric ladder from the smallest penalty that zeroes every slope down to
/// one hundredth of it. Falls back to a ridge fit when the ladder fails or
/// separates.
pub fn mar_propensity(data: &Dataset, indices: &[usize]) -> Result<MarPropensity> {
    let n = data.n();
    let x = design_matrix(data, indices);
    let r = data.r();
    let rbar = data.respondent_count() as f64 / n as f64;
    if rbar == 0.0 || rbar == 1.0 {
        let pi = vec![rbar.max(PI_FLOOR); n];
        let c0 = if rbar == 1.0 { -40.0 } else { 40.0 };
        let mut coef = vec![0.0; indices.len() + 1];
        coef[0] = c0;
        return Ok(MarPropensity { indices: indices.to_vec(), coef, lambda: f64::INFINITY, ridge_fallback: false, pi });
    }
    // gradient of the mean NLL at the intercept-only fit
    let resid: Vec<f64> = r.iter().map(|&ri| (1.0 - rbar) - if ri { 0.0 } else { 1.0 }).collect();
    let lambda_max = (1..x.ncols())
        .map(|j| x.column(j).iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>().abs() / n as f64)
        .fold(0.0f64, f64::max);
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut start = vec![0.0; x.ncols()];
    start[0] = (1.0 / rbar - 1.0).ln();
    if lambda_max > 0.0 {
        for k in 0..LADDER_POINTS {
            let lambda = lambda_max * 0.01f64.powf(k as f64 / (LADDER_POINTS - 1) as f64);
            let Ok(fit) = fit_logistic_l1(&x, r, lambda, Some(&start)) else { continue };
            if fit.coef.iter().any(|c| !c.is_finite()) {
                continue;
            }
            let df = fit.coef[1..].iter().filter(|c| **c != 0.0).count() + 1;
            let bic = 2.0 * n as f64 * fit.nll + (n as f64).ln() * df as f64;
            start = fit.coef.clone();
            if best.as_ref().is_none_or(|b| bic < b.0) {
                best = Some((bic, lambda, fit.coef));
            }
        }
    }
    let separated = |c: &[f64]| (0..n).any(|i| (x.row(i) * nalgebra::DVector::from_column_slice(c))[0].abs() > 30.0);
    let (lambda, coef, ridge_fallback) = match best {
        Some((_, l, c)) if !separated(&c) => (l, c, false),
        _ => {
            log::warn!("propensity ladder failed or separated; using a ridge fit");
            let fit = fit_logistic(&x, r, &vec![0.0; n], None, 1e-2, 100)?;
            (f64::NAN, fit.coef, true)
        }
    };
    let c = nalgebra::DVector::from_column_slice(&coef);
    let eta = &x * c;
    let pi = eta.iter().map(|e| 1.0 - sigmoid(*e)).collect();
    Ok(MarPropensity { indices: indices.to_vec(), coef, lambda, ridge_fallback, pi })
}

/// IPW under a MAR propensity fitted on `indices`.
pub fn ipw_mar_weights(
    data: &Dataset,
    indices: &[usize],
    candidates: &NestedCandidates,
    tau: QuantileLevel,
    phi_n: f64,
    cfg: &CqfConfig,
) -> Result<(IpwResult, MarPropensity)> {
    let prop = mar_propensity(data, indices)?;
    Ok((ipw_weights(data, &prop.pi, candidates, tau, phi_n, cfg)?, prop))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueFamilyFit {
    pub mechanism: TrueMechanism,
    pub nll: f64,
}

fn with_params(family: &TrueMechanism, t: &[f64]) -> TrueMechanism {
    TrueMechanism {
        link: family.link,
        intercept: t[0],
        coefs: family.coefs.iter().zip(&t[1..]).map(|(&(j, _), &c)| (j, c)).collect(),
        y_coef: t[t.len() - 1],
    }
}

/// Mean NLL of `r` under `P(r = 0 | x) = O / (1 + O)` with
/// `O(x) = E[(1 - pi) / pi | x, r = 1]` taken over the support.
pub fn true_family_nll(data: &Dataset, support: &ConditionalSupport, m: &TrueMechanism) -> f64 {
    let x = data.x();
    let log_odds: Vec<f64> = support
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let t: Vec<f64> = u.logw.iter().zip(&u.values).map(|(w, v)| w + m.log_odds(x, i, *v)).collect();
            u.offset + crate::conditional::log_sum_exp(&t)
        })
        .collect();
    let v = mean_nll(&log_odds, data.r());
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Fits the parameters of `family` (its link and covariates; the values in
/// `family` are ignored) by maximizing the semiparametric likelihood. Several
/// Nelder-Mead starts, each restarted until it stops improving.
pub fn sma_t_mechanism(data: &Dataset, support: &ConditionalSupport, family: &TrueMechanism) -> Result<TrueFamilyFit> {
    data.require_partial_response()?;
    if support.n() != data.n() {
        return Err(SmaError::Dimension { expected: data.n(), got: support.n() });
    }
    let k = family.coefs.len() + 2;
    let f = |t: &[f64]| true_family_nll(data, support, &with_params(family, t));
    let nm = NelderMeadConfig { initial_step: 0.5, max_evals: 400 * k, f_tol: 1e-12 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for y0 in [0.0, 1.0, -1.0] {
        let mut t = vec![0.0; k];
        t[k - 1] = y0;
        let mut v = f(&t);
        for _ in 0..5 {
            let (nt, nv, _) = nelder_mead(f, &t, &nm);
            let done = nv >= v - 1e-10;
            if nv <= v {
                t = nt;
                v = nv;
            }
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((t, v));
        }
    }
    let (t, nll) = best.unwrap();
    if !nll.is_finite() {
        return Err(SmaError::Numerical("true-family likelihood is not finite".into()));
    }
    Ok(TrueFamilyFit { mechanism: with_params(family, &t), nll })
}

/// Tilt of the support by the fitted family's odds.
pub fn true_family_law(data: &Dataset, support: &ConditionalSupport, m: &TrueMechanism) -> TiltedLaw {
    let x: &DMatrix<f64> = data.x();
    support.tilted(|i, v| m.log_odds(x, i, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqf::CqfParams;
    use proptest::prelude::*;

    fn cand(size: usize, objective: f64) -> CandidateCqf {
        CandidateCqf {
            params: CqfParams { indices: (0..size).collect(), beta: vec![0.0; size + 1] },
            objective,
            converged: true,
            capped: false,
        }
    }

    #[test]
    fn aic_arithmetic() {
        let s = ic_scores(100, &[cand(4, 0.5)], IcKind::Aic);
        assert!((s[0] - (200.0 * 0.5f64.ln() + 8.0)).abs() < 1e-12);
        assert!((s[0] + 130.63).abs() < 0.005);
    }

    #[test]
    fn equal_objectives_isolate_penalty() {
        let fits = [cand(2, 0.3), cand(5, 0.3)];
        for kind in [IcKind::Aic, IcKind::Bic] {
            let s = ic_scores(80, &fits, kind);
            assert!((s[1] - s[0] - kind.penalty(80) * 3.0).abs() < 1e-9);
        }
        let a = ic_scores(80, &fits, IcKind::Aic);
        let b = ic_scores(80, &fits, IcKind::Bic);
        for (m, f) in fits.iter().enumerate() {
            assert!((b[m] - a[m] - ((80f64).ln() - 2.0) * f.params.indices.len() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_objective_is_clipped() {
        assert!(ic_scores(10, &[cand(1, 0.0)], IcKind::Aic)[0].is_finite());
    }

    #[test]
    fn smoothing_examples() {
        let w = smoothed_ic_weights(&[0.0, 2.0 * 3f64.ln()]).unwrap();
        assert!((w.as_slice()[0] - 0.75).abs() < 1e-12 && (w.as_slice()[1] - 0.25).abs() < 1e-12);
        assert_eq!(smoothed_ic_weights(&[4.0, 4.0, 4.0]).unwrap().as_slice(), &[1.0 / 3.0; 3]);
        assert_eq!(smoothed_ic_weights(&[0.0, 1e6]).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn fold_merging() {
        let mut r = vec![true; 20];
        let (label, k) = assign_folds(&r, 5, 1).unwrap();
        assert_eq!(k, 5);
        assert!((0..5).all(|f| label.iter().filter(|&&l| l == f).count() == 4));
        for (i, ri) in r.iter_mut().enumerate() {
            *ri = label[i] != 2;
        }
        let (merged, k) = assign_folds(&r, 5, 1).unwrap();
        assert_eq!(k, 4);
        assert!((0..4).all(|f| (0..20).any(|i| merged[i] == f && r[i])));
        assert!(assign_folds(&r, 5, 1).is_ok() && assign_folds(&r[..9], 5, 1).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_is_shift_invariant_and_coherent(s in prop::collection::vec(-50.0f64..50.0, 1..6), c in -100.0f64..100.0) {
            let w = smoothed_ic_weights(&s).unwrap();
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let w2 = smoothed_ic_weights(&shifted).unwrap();
            for (a, b) in w.as_slice().iter().zip(w2.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(w.as_slice().iter().all(|v| *v > 0.0));
            let sel = ic_select(&s).unwrap();
            prop_assert_eq!(w.as_slice()[sel.argmax()], w.as_slice().iter().cloned().fold(0.0, f64::max));
        }
    }
}
