//! The full estimator: reduce, estimate the respondents' conditional law,
//! average the nonresponse candidates, then average the quantile candidates.

use crate::conditional::{Backend, ConditionalSupport, Smoother, TiltedLaw};
use crate::cqf::{fit_cqf, CqfConfig, CqfFit};
use crate::data::Dataset;
use crate::error::{Result, SmaError};
use crate::kernel::KernelConfig;
use crate::loss::QuantileLevel;
use crate::mechanism::{fit_mechanism, MechanismConfig, MechanismFit};
use crate::sampling::{sample_conditional, SamplerConfig};
use crate::screening::NestedCandidates;
use crate::sir::{default_slices, sir_basis, ReductionBasis, DEFAULT_SIR_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmaConfig {
    pub tau: QuantileLevel,
    pub backend: Backend,
    pub sir_dim: usize,
    /// `None` means [`default_slices`].
    pub sir_slices: Option<usize>,
    pub kernel: KernelConfig,
    pub sampler: SamplerConfig,
    pub mechanism: MechanismConfig,
    pub cqf: CqfConfig,
}

impl SmaConfig {
    pub fn new(tau: QuantileLevel) -> Self {
        Self {
            tau,
            backend: Backend::Kernel,
            sir_dim: DEFAULT_SIR_DIM,
            sir_slices: None,
            kernel: KernelConfig::default(),
            sampler: SamplerConfig::default(),
            mechanism: MechanismConfig::default(),
            cqf: CqfConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sir_dim == 0 {
            return Err(SmaError::Config("sir_dim must be positive".into()));
        }
        self.kernel.validate()?;
        self.sampler.validate()?;
        self.mechanism.validate()?;
        self.cqf.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSupport {
    pub basis: ReductionBasis,
    pub support: ConditionalSupport,
    /// Mean Metropolis acceptance rate; sampled backend only.
    pub mean_acceptance: Option<f64>,
}

/// SIR basis on `smoothing` and the conditional support in the configured
/// backend.
pub fn prepare_support(data: &Dataset, smoothing: &[usize], cfg: &SmaConfig) -> Result<PreparedSupport> {
    cfg.validate()?;
    data.require_partial_response()?;
    let d = cfg.sir_dim.min(smoothing.len());
    let slices = cfg.sir_slices.unwrap_or_else(|| default_slices(data.respondent_count()));
    let basis = sir_basis(data, smoothing, d, slices)?;
    let (support, mean_acceptance) = match cfg.backend {
        Backend::Kernel => (ConditionalSupport::kernel(data, &Smoother::new(data, &basis, &cfg.kernel)?)?, None),
        Backend::Sampled => {
            let draws = sample_conditional(data, &basis, &cfg.sampler, &cfg.kernel)?;
            (ConditionalSupport::sampled(&draws), Some(draws.mean_acceptance()))
        }
    };
    Ok(PreparedSupport { basis, support, mean_acceptance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmaFit {
    pub backend: Backend,
    pub basis: ReductionBasis,
    pub mechanism: MechanismFit,
    pub cqf: CqfFit,
}

impl SmaFit {
    pub fn predict(&self, x_new: &[f64]) -> Result<f64> {
        self.cqf.predict(x_new)
    }
}

/// Nonresponse averaging on `mechanism_candidates`, then quantile averaging
/// on `cqf_candidates` under the tilt of the combined `gamma`.
pub fn fit_with_support(
    data: &Dataset,
    support: &ConditionalSupport,
    smoothing: &[usize],
    mechanism_candidates: &NestedCandidates,
    cqf_candidates: &NestedCandidates,
    cfg: &SmaConfig,
) -> Result<(MechanismFit, TiltedLaw, CqfFit)> {
    let mech = fit_mechanism(data, support, mechanism_candidates, smoothing, &cfg.mechanism)?;
    let law = support.tilted_exp(mech.combined.gamma);
    let cqf = fit_cqf(data, &law, cqf_candidates, cfg.tau, &cfg.cqf)?;
    Ok((mech, law, cqf))
}

/// End to end with the same nested sets for both stages, smoothing on the
/// largest candidate.
pub fn fit_sma(data: &Dataset, candidates: &NestedCandidates, cfg: &SmaConfig) -> Result<SmaFit> {
    let smoothing = candidates.largest().to_vec();
    let prep = prepare_support(data, &smoothing, cfg)?;
    let (mechanism, _, cqf) = fit_with_support(data, &prep.support, &smoothing, candidates, candidates, cfg)?;
    Ok(SmaFit { backend: cfg.backend, basis: prep.basis, mechanism, cqf })
}
