//! One replication: draw, mask, screen, fit every requested method, score on
//! a fresh complete test set.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use sma_core::baselines::{
    cvma_weights, ic_scores, ic_select, ipw_mar_weights, ipw_mnar_weights, mechanism_ic_scores, sma_t_mechanism,
    smoothed_ic_weights, true_family_law, IcKind,
};
use sma_core::conditional::{Backend, ConditionalSupport, TiltedLaw};
use sma_core::cqf::{fit_candidate_on_rows, fit_cqf, fit_cqf_candidate, CqfParams};
use sma_core::dgp::{apply_missingness, Truth};
use sma_core::loss::check_loss;
use sma_core::mechanism::{combine_theta, MechanismFit};
use sma_core::pipeline::{fit_with_support, prepare_support, SmaConfig};
use sma_core::rng::{derive_seed, stream};
use sma_core::screening::{build_nested, dcsis_screen, gps_algorithm, ps_algorithm, screening_size, NestedCandidates};
use sma_core::simplex::SimplexWeights;
use sma_core::{Dataset, QuantileLevel, Result, SmaError};

use crate::config::{Method, ScreeningMode, SimConfig};

/// Candidate coefficients with averaging weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Averaged {
    pub fits: Vec<CqfParams>,
    pub weights: Vec<f64>,
}

impl Averaged {
    pub fn new(fits: Vec<CqfParams>, weights: &SimplexWeights) -> Self {
        Self { fits, weights: weights.as_slice().to_vec() }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.fits.iter().zip(&self.weights).map(|(f, w)| w * f.predict(x)).sum()
    }
}

/// Mean check loss of `predict` on the rows of `x`.
pub fn fpr_evaluate(predict: impl Fn(&[f64]) -> f64, x: &DMatrix<f64>, y: &[f64], tau: QuantileLevel) -> f64 {
    let mut row = vec![0.0; x.ncols()];
    let mut s = 0.0;
    for (i, yi) in y.iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        s += check_loss(yi - predict(&row), tau);
    }
    s / y.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub fpr: f64,
    /// Size of the largest candidate, then false positives and false
    /// negatives against the relevant covariates.
    pub ms: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepResult {
    pub rep: usize,
    pub missing_rate: f64,
    /// Best single full-data candidate's test FPR.
    pub normalizer: f64,
    /// Mean Metropolis acceptance when a sampled method ran.
    pub acceptance: Option<f64>,
    pub outcomes: Vec<(Method, std::result::Result<Outcome, String>)>,
}

fn selection_counts(largest: &[usize], truth: &Truth) -> (usize, usize, usize) {
    let fp = largest.iter().filter(|j| !truth.relevant.contains(j)).count();
    let fn_ = truth.relevant.iter().filter(|j| !largest.contains(j)).count();
    (largest.len(), fp, fn_)
}

/// Everything shared between methods within one replication.
struct Rep<'a> {
    cfg: &'a SimConfig,
    sma: SmaConfig,
    data: Dataset,
    truth: &'a Truth,
    rep: usize,
    d_n: usize,
    base: NestedCandidates,
    kernel: Option<ConditionalSupport>,
    sampled: Option<ConditionalSupport>,
    sampled_mech: Option<MechanismFit>,
    sampled_cqf: Option<(TiltedLaw, Vec<CqfParams>, SimplexWeights)>,
    ic_cache: BTreeMap<&'static str, (Vec<CqfParams>, Vec<f64>)>,
    acceptance: Option<f64>,
}

impl<'a> Rep<'a> {
    fn smoothing(&self) -> Vec<usize> {
        self.base.largest().to_vec()
    }

    fn support(&mut self, backend: Backend) -> Result<&ConditionalSupport> {
        let smoothing = self.smoothing();
        let slot = match backend {
            Backend::Kernel => &mut self.kernel,
            Backend::Sampled => &mut self.sampled,
        };
        if slot.is_none() {
            let cfg = SmaConfig { backend, ..self.sma };
            let prep = prepare_support(&self.data, &smoothing, &cfg)?;
            if prep.mean_acceptance.is_some() {
                self.acceptance = prep.mean_acceptance;
            }
            *slot = Some(prep.support);
        }
        Ok(slot.as_ref().unwrap())
    }

    fn sampled_mechanism(&mut self) -> Result<MechanismFit> {
        if self.sampled_mech.is_none() {
            let smoothing = self.smoothing();
            let support = self.support(Backend::Sampled)?.clone();
            let (mech, law, cqf) = fit_with_support(&self.data, &support, &smoothing, &self.base, &self.base, &self.sma)?;
            let fits = cqf.per_candidate.iter().map(|c| c.params.clone()).collect();
            self.sampled_cqf = Some((law, fits, cqf.weights));
            self.sampled_mech = Some(mech);
        }
        Ok(self.sampled_mech.clone().unwrap())
    }

    /// Candidate fits and IC scores, with `gamma` taken from the nonresponse
    /// candidate the same criterion selects.
    fn ic(&mut self, kind: IcKind) -> Result<(Vec<CqfParams>, Vec<f64>)> {
        let key = if kind == IcKind::Aic { "aic" } else { "bic" };
        if let Some(v) = self.ic_cache.get(key) {
            return Ok(v.clone());
        }
        let mech = self.sampled_mechanism()?;
        let n = self.data.n();
        let w = ic_select(&mechanism_ic_scores(n, &mech.per_candidate, kind))?;
        let gamma = combine_theta(&mech.per_candidate, &w)?.gamma;
        let law = self.support(Backend::Sampled)?.tilted_exp(gamma);
        let fits = self
            .base
            .index_sets
            .iter()
            .map(|s| fit_cqf_candidate(&self.data, &law, s, self.sma.tau, &self.sma.cqf))
            .collect::<Result<Vec<_>>>()?;
        let scores = ic_scores(n, &fits, kind);
        let out = (fits.into_iter().map(|f| f.params).collect::<Vec<_>>(), scores);
        self.ic_cache.insert(key, out.clone());
        Ok(out)
    }

    /// Smoothed weights, with `gamma` from the equally smoothed nonresponse
    /// weights.
    fn smoothed_ic(&mut self, kind: IcKind) -> Result<Averaged> {
        let mech = self.sampled_mechanism()?;
        let wm = smoothed_ic_weights(&mechanism_ic_scores(self.data.n(), &mech.per_candidate, kind))?;
        let gamma = combine_theta(&mech.per_candidate, &wm)?.gamma;
        let law = self.support(Backend::Sampled)?.tilted_exp(gamma);
        let refits = self
            .base
            .index_sets
            .iter()
            .map(|s| fit_cqf_candidate(&self.data, &law, s, self.sma.tau, &self.sma.cqf))
            .collect::<Result<Vec<_>>>()?;
        let w = smoothed_ic_weights(&ic_scores(self.data.n(), &refits, kind))?;
        Ok(Averaged::new(refits.into_iter().map(|f| f.params).collect(), &w))
    }

    fn run(&mut self, method: Method) -> Result<(Averaged, Vec<usize>)> {
        let base_largest = self.base.largest().to_vec();
        let phi_n = self.sma.cqf.phi_for(self.data.n());
        match method {
            Method::Sma => {
                let smoothing = self.smoothing();
                let support = self.support(Backend::Kernel)?.clone();
                let (_, _, cqf) = fit_with_support(&self.data, &support, &smoothing, &self.base, &self.base, &self.sma)?;
                let fits = cqf.per_candidate.into_iter().map(|c| c.params).collect();
                Ok((Averaged::new(fits, &cqf.weights), base_largest))
            }
            Method::SmaS => {
                self.sampled_mechanism()?;
                let (_, fits, w) = self.sampled_cqf.clone().unwrap();
                Ok((Averaged::new(fits, &w), base_largest))
            }
            Method::SmaT => {
                let support = self.support(Backend::Sampled)?.clone();
                let fam = sma_t_mechanism(&self.data, &support, &self.truth.mechanism)?;
                let law = true_family_law(&self.data, &support, &fam.mechanism);
                let cqf = fit_cqf(&self.data, &law, &self.base, self.sma.tau, &self.sma.cqf)?;
                let fits = cqf.per_candidate.into_iter().map(|c| c.params).collect();
                Ok((Averaged::new(fits, &cqf.weights), base_largest))
            }
            Method::Aic | Method::Bic => {
                let kind = if method == Method::Aic { IcKind::Aic } else { IcKind::Bic };
                let (fits, scores) = self.ic(kind)?;
                Ok((Averaged::new(fits, &ic_select(&scores)?), base_largest))
            }
            Method::Saic => Ok((self.smoothed_ic(IcKind::Aic)?, base_largest)),
            Method::Sbic => Ok((self.smoothed_ic(IcKind::Bic)?, base_largest)),
            Method::Cvma => {
                self.sampled_mechanism()?;
                let (law, fits, _) = self.sampled_cqf.clone().unwrap();
                let seed = derive_seed(self.cfg.seed, &[self.rep as u64, 3]);
                let res = cvma_weights(&self.data, &law, &self.base, self.sma.tau, self.cfg.cv_folds, seed, &self.sma.cqf)?;
                Ok((Averaged::new(fits, &res.weights), base_largest))
            }
            Method::IpwMnar => {
                let mech = self.sampled_mechanism()?;
                let res = ipw_mnar_weights(&self.data, &mech.combined, &self.base, self.sma.tau, phi_n, &self.sma.cqf)?;
                Ok((Averaged::new(res.fits.into_iter().map(|f| f.params).collect(), &res.weights), base_largest))
            }
            Method::IpwMar => {
                let (res, _) =
                    ipw_mar_weights(&self.data, &base_largest, &self.base, self.sma.tau, phi_n, &self.sma.cqf)?;
                Ok((Averaged::new(res.fits.into_iter().map(|f| f.params).collect(), &res.weights), base_largest))
            }
            Method::PsSma | Method::GpsSma => {
                let sel = if method == Method::PsSma {
                    ps_algorithm(&self.data, self.d_n, self.cfg.gvi_threshold)?
                } else {
                    gps_algorithm(&self.data, self.d_n, self.cfg.gvi_threshold)?
                };
                let cands = build_nested(&sel.indices)?;
                let smoothing = cands.largest().to_vec();
                let support = prepare_support(&self.data, &smoothing, &self.sma)?.support;
                let (_, _, cqf) = fit_with_support(&self.data, &support, &smoothing, &cands, &cands, &self.sma)?;
                let fits = cqf.per_candidate.into_iter().map(|c| c.params).collect();
                Ok((Averaged::new(fits, &cqf.weights), smoothing))
            }
        }
    }
}

/// Runs replication `rep`. Errors before any method is fitted (data,
/// screening) fail the whole replication.
pub fn run_replication(cfg: &SimConfig, truth: &Truth, methods: &[Method], rep: usize) -> Result<RepResult> {
    let spec = cfg.spec();
    let tau = QuantileLevel::new(cfg.tau)?;
    let mut rng = stream(cfg.seed, &[rep as u64]);
    let (x, y, _) = spec.draw(truth, cfg.n, &mut rng);
    let full = Dataset::complete(x, y)?;
    let data = apply_missingness(&full, &truth.mechanism, &mut rng)?;
    data.require_partial_response()?;
    let (test_x, test_y, _) = spec.draw(truth, cfg.test_size, &mut stream(cfg.seed, &[rep as u64, 1]));

    let d_n = screening_size(cfg.n);
    let screened = dcsis_screen(&data)?;
    let dcsis = build_nested(&screened.ordered_indices)?;
    let base = match cfg.screening {
        ScreeningMode::Dcsis => dcsis.clone(),
        ScreeningMode::Ps => build_nested(&ps_algorithm(&data, d_n, cfg.gvi_threshold)?.indices)?,
        ScreeningMode::Gps => build_nested(&gps_algorithm(&data, d_n, cfg.gvi_threshold)?.indices)?,
    };

    // best single candidate fitted on the complete training data
    let rows: Vec<(usize, f64, f64)> = (0..cfg.n).map(|i| (i, full.y()[i], 1.0 / cfg.n as f64)).collect();
    let mut normalizer = f64::INFINITY;
    for set in &base.index_sets {
        let fit = fit_candidate_on_rows(&full, &rows, set, tau, &cfg.cqf)?;
        normalizer = normalizer.min(fpr_evaluate(|x| fit.params.predict(x), &test_x, &test_y, tau));
    }
    if !(normalizer > 0.0) {
        return Err(SmaError::Numerical(format!("normalizer {normalizer} is not positive")));
    }

    let mut sma = SmaConfig::new(tau);
    sma.sir_dim = cfg.sir_dim;
    sma.kernel = cfg.kernel;
    sma.sampler = cfg.sampler;
    sma.sampler.seed = derive_seed(cfg.seed, &[rep as u64, 2]);
    sma.mechanism = cfg.mechanism;
    sma.cqf = cfg.cqf;
    let missing_rate = data.missing_rate();
    let mut state = Rep {
        cfg,
        sma,
        data,
        truth,
        rep,
        d_n,
        base,
        kernel: None,
        sampled: None,
        sampled_mech: None,
        sampled_cqf: None,
        ic_cache: BTreeMap::new(),
        acceptance: None,
    };
    let outcomes = methods
        .iter()
        .map(|&m| {
            let res = state.run(m).map(|(avg, largest)| {
                let (ms, fp, fn_) = selection_counts(&largest, truth);
                Outcome { fpr: fpr_evaluate(|x| avg.predict(x), &test_x, &test_y, tau), ms, fp, fn_ }
            });
            if let Err(e) = &res {
                log::warn!("replication {rep}, {}: {e}", m.name());
            }
            (m, res.map_err(|e| e.to_string()))
        })
        .collect();
    Ok(RepResult { rep, missing_rate, normalizer, acceptance: state.acceptance, outcomes })
}
