use sma_core::cqf::CqfConfig;
use sma_core::dgp::{CovStructure, Design, DgpSpec, MechanismCase, Scenario};
use sma_core::kernel::KernelConfig;
use sma_core::mechanism::MechanismConfig;
use sma_core::sampling::SamplerConfig;
use sma_core::screening::GviThreshold;
use sma_core::sir::DEFAULT_SIR_DIM;
use sma_core::{Result, SmaError};

/// Estimators a bench can run. `Sma` uses the kernel backend, `SmaS` and
/// every competitor the sampled backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sma,
    SmaS,
    SmaT,
    Aic,
    Bic,
    Saic,
    Sbic,
    Cvma,
    IpwMnar,
    IpwMar,
    PsSma,
    GpsSma,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::Sma,
        Method::SmaS,
        Method::SmaT,
        Method::Aic,
        Method::Bic,
        Method::Saic,
        Method::Sbic,
        Method::Cvma,
        Method::IpwMnar,
        Method::IpwMar,
        Method::PsSma,
        Method::GpsSma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sma => "SMA",
            Method::SmaS => "SMA-s",
            Method::SmaT => "SMA-T",
            Method::Aic => "AIC",
            Method::Bic => "BIC",
            Method::Saic => "SAIC",
            Method::Sbic => "SBIC",
            Method::Cvma => "CVMA",
            Method::IpwMnar => "IPW-MNAR",
            Method::IpwMar => "IPW-MAR",
            Method::PsSma => "PS-SMA",
            Method::GpsSma => "GPS-SMA",
        }
    }

    /// Case-insensitive; accepts the display names and underscores for dashes.
    pub fn parse(s: &str) -> Result<Method> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| SmaError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScreeningMode {
    #[default]
    Dcsis,
    Ps,
    Gps,
}

impl ScreeningMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dcsis" => Ok(Self::Dcsis),
            "ps" => Ok(Self::Ps),
            "gps" => Ok(Self::Gps),
            _ => Err(SmaError::Config(format!("unknown screening mode {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dcsis => "dcsis",
            Self::Ps => "ps",
            Self::Gps => "gps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub tau: f64,
    pub replications: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Candidate construction for every method except PS-SMA and GPS-SMA.
    pub screening: ScreeningMode,
    pub gvi_threshold: GviThreshold,
    pub sir_dim: usize,
    pub kernel: KernelConfig,
    /// `seed` is replaced by a per-replication seed.
    pub sampler: SamplerConfig,
    pub mechanism: MechanismConfig,
    pub cqf: CqfConfig,
    pub cv_folds: usize,
    /// 0 uses the machine default.
    pub threads: usize,
}

impl SimConfig {
    /// Main design with `p = 5n`, 50 replications and 100 test points.
    pub fn main(n: usize, scenario: Scenario, mechanism: MechanismCase, r_squared: f64, tau: f64) -> Self {
        Self::with_design(n, 5 * n, Design::Main { scenario, mechanism, r_squared }, tau)
    }

    /// Correlated design with an autoregressive covariance.
    pub fn correlated(n: usize, p: usize, rho: f64, tau: f64) -> Self {
        Self::with_design(n, p, Design::Correlated { rho, structure: CovStructure::Autoregressive }, tau)
    }

    pub fn with_design(n: usize, p: usize, design: Design, tau: f64) -> Self {
        Self {
            n,
            p,
            design,
            tau,
            replications: 50,
            test_size: 100,
            seed: 0,
            screening: ScreeningMode::Dcsis,
            gvi_threshold: GviThreshold::default(),
            sir_dim: DEFAULT_SIR_DIM,
            kernel: KernelConfig::default(),
            sampler: SamplerConfig::default(),
            mechanism: MechanismConfig::default(),
            cqf: CqfConfig::default(),
            cv_folds: 5,
            threads: 0,
        }
    }

    pub fn spec(&self) -> DgpSpec {
        DgpSpec { n: self.n, p: self.p, design: self.design, tau: self.tau }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(SmaError::Config(format!("n must be at least 20, got {}", self.n)));
        }
        if self.replications == 0 {
            return Err(SmaError::Config("replications must be at least 1".into()));
        }
        if self.test_size == 0 {
            return Err(SmaError::Config("test_size must be at least 1".into()));
        }
        if self.sir_dim == 0 {
            return Err(SmaError::Config("sir_dim must be positive".into()));
        }
        if self.cv_folds < 2 || self.n < 2 * self.cv_folds {
            return Err(SmaError::Config(format!("cv_folds = {} is invalid for n = {}", self.cv_folds, self.n)));
        }
        self.kernel.validate()?;
        self.sampler.validate()?;
        self.mechanism.validate()?;
        self.cqf.validate()?;
        self.spec().validate()
    }

    /// `(design, scenario, case, r_squared, rho)` labels for reports.
    pub fn labels(&self) -> (String, String, String, String, String) {
        match self.design {
            Design::Main { scenario, mechanism, r_squared } => (
                "main".into(),
                match scenario {
                    Scenario::Heteroskedastic => "I",
                    Scenario::Homoscedastic => "II",
                }
                .into(),
                match mechanism {
                    MechanismCase::Logistic => "a",
                    MechanismCase::LogLog => "b",
                }
                .into(),
                format!("{r_squared}"),
                String::new(),
            ),
            Design::Correlated { rho, structure } => (
                match structure {
                    CovStructure::Autoregressive => "correlated-ar",
                    CovStructure::CompoundSymmetric => "correlated-cs",
                }
                .into(),
                String::new(),
                "logit".into(),
                String::new(),
                format!("{rho}"),
            ),
        }
    }
}
