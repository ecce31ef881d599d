//! Flat `key = value` run configuration. Command-line values override the
//! file, which overrides the defaults.

use std::path::PathBuf;

use sma_core::conditional::Backend;
use sma_core::dgp::{CovStructure, Design, MechanismCase, Scenario};
use sma_core::kernel::KernelConfig;
use sma_core::mechanism::MechanismConfig;
use sma_core::sampling::SamplerConfig;
use sma_core::screening::GviThreshold;
use sma_core::sir::DEFAULT_SIR_DIM;
use sma_core::{QuantileLevel, Result, SmaError};
use sma_simbench::{Method, ScreeningMode, SimConfig};

pub const KEYS: &[&str] = &[
    "seed",
    "tau",
    "backend",
    "lambda_n",
    "phi_n",
    "gamma_cap",
    "bandwidth_scale",
    "bandwidth_exponent",
    "sampler_iterations",
    "sampler_keep",
    "proposal_sd_scale",
    "sir_dim",
    "screening",
    "gvi_threshold",
    "methods",
    "threads",
    "data",
    "fit",
    "mechanism_fit",
    "out",
    "design",
    "scenario",
    "case",
    "r_squared",
    "rho",
    "covariance",
    "n",
    "p",
    "replications",
    "test_size",
    "cv_folds",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Several levels are only meaningful for `bench`.
    pub tau: Vec<f64>,
    pub backend: Backend,
    pub lambda_n: Option<f64>,
    pub phi_n: Option<f64>,
    pub gamma_cap: f64,
    pub kernel: KernelConfig,
    pub sampler: SamplerConfig,
    pub sir_dim: usize,
    pub screening: ScreeningMode,
    pub gvi_threshold: GviThreshold,
    pub methods: Vec<Method>,
    pub threads: usize,
    pub data: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub mechanism_fit: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub correlated: bool,
    pub scenario: Scenario,
    pub case: MechanismCase,
    pub r_squared: Vec<f64>,
    pub rho: f64,
    pub covariance: CovStructure,
    pub n: usize,
    /// `None` means `5n` for the main design and 300 for the correlated one.
    pub p: Option<usize>,
    pub replications: usize,
    pub test_size: usize,
    pub cv_folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau: vec![0.5],
            backend: Backend::Kernel,
            lambda_n: None,
            phi_n: None,
            gamma_cap: MechanismConfig::default().gamma_cap,
            kernel: KernelConfig::default(),
            sampler: SamplerConfig::default(),
            sir_dim: DEFAULT_SIR_DIM,
            screening: ScreeningMode::Dcsis,
            gvi_threshold: GviThreshold::default(),
            methods: Method::ALL.to_vec(),
            threads: 0,
            data: None,
            fit: None,
            mechanism_fit: None,
            out: None,
            correlated: false,
            scenario: Scenario::Heteroskedastic,
            case: MechanismCase::Logistic,
            r_squared: vec![0.5],
            rho: 0.5,
            covariance: CovStructure::Autoregressive,
            n: 80,
            p: None,
            replications: 50,
            test_size: 100,
            cv_folds: 5,
        }
    }
}

/// `key = value` pairs of a config file with their line numbers. Blank lines
/// and `#` comments are skipped; a repeated key is an error.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| SmaError::Parse { line, msg: format!("expected `key = value`, found {body:?}") })?;
        let key = key.trim().to_string();
        if out.iter().any(|(_, k, _)| *k == key) {
            return Err(SmaError::Parse { line, msg: format!("duplicate key {key:?}") });
        }
        out.push((line, key, value.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| SmaError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    let out = v.split(',').map(|s| num::<f64>(key, s.trim())).collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(SmaError::Config(format!("{key}: empty list")));
    }
    Ok(out)
}

fn optional(key: &str, v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("default") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "tau" => self.tau = list(key, v)?,
            "backend" => {
                self.backend = match v.to_ascii_lowercase().as_str() {
                    "kernel" => Backend::Kernel,
                    "sampled" => Backend::Sampled,
                    _ => return Err(SmaError::Config(format!("backend must be kernel or sampled, got {v:?}"))),
                }
            }
            "lambda_n" => self.lambda_n = optional(key, v)?,
            "phi_n" => self.phi_n = optional(key, v)?,
            "gamma_cap" => self.gamma_cap = num(key, v)?,
            "bandwidth_scale" => self.kernel.bandwidth_scale = num(key, v)?,
            "bandwidth_exponent" => self.kernel.bandwidth_exponent = num(key, v)?,
            "sampler_iterations" => self.sampler.total_iterations = num(key, v)?,
            "sampler_keep" => self.sampler.keep_last = num(key, v)?,
            "proposal_sd_scale" => self.sampler.proposal_sd_scale = num(key, v)?,
            "sir_dim" => self.sir_dim = num(key, v)?,
            "screening" => self.screening = ScreeningMode::parse(v)?,
            "gvi_threshold" => {
                self.gvi_threshold = if v.eq_ignore_ascii_case("min-nested") {
                    GviThreshold::MinNested
                } else {
                    GviThreshold::Fixed(num(key, v)?)
                }
            }
            "methods" => {
                self.methods = v.split(',').map(Method::parse).collect::<Result<Vec<_>>>()?;
            }
            "threads" => self.threads = num(key, v)?,
            "data" => self.data = Some(PathBuf::from(v)),
            "fit" => self.fit = Some(PathBuf::from(v)),
            "mechanism_fit" => self.mechanism_fit = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "design" => {
                self.correlated = match v.to_ascii_lowercase().as_str() {
                    "main" => false,
                    "correlated" => true,
                    _ => return Err(SmaError::Config(format!("design must be main or correlated, got {v:?}"))),
                }
            }
            "scenario" => {
                self.scenario = match v {
                    "I" | "1" => Scenario::Heteroskedastic,
                    "II" | "2" => Scenario::Homoscedastic,
                    _ => return Err(SmaError::Config(format!("scenario must be I or II, got {v:?}"))),
                }
            }
            "case" => {
                self.case = match v.to_ascii_lowercase().as_str() {
                    "a" | "logistic" => MechanismCase::Logistic,
                    "b" | "loglog" => MechanismCase::LogLog,
                    _ => return Err(SmaError::Config(format!("case must be a or b, got {v:?}"))),
                }
            }
            "r_squared" => self.r_squared = list(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "covariance" => {
                self.covariance = match v.to_ascii_lowercase().as_str() {
                    "ar" => CovStructure::Autoregressive,
                    "cs" => CovStructure::CompoundSymmetric,
                    _ => return Err(SmaError::Config(format!("covariance must be ar or cs, got {v:?}"))),
                }
            }
            "n" => self.n = num(key, v)?,
            "p" => self.p = optional(key, v)?.map(|x| x as usize),
            "replications" => self.replications = num(key, v)?,
            "test_size" => self.test_size = num(key, v)?,
            "cv_folds" => self.cv_folds = num(key, v)?,
            _ => return Err(SmaError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults, then `file` (config text), then `overrides` in order.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(text) = file {
            for (line, k, v) in parse_pairs(text)? {
                cfg.set(&k, &v).map_err(|e| SmaError::Parse { line, msg: e.to_string() })?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tau {
            QuantileLevel::new(*t)?;
        }
        for r in &self.r_squared {
            if !(*r > 0.0 && *r < 1.0) {
                return Err(SmaError::Config(format!("r_squared must lie in (0, 1), got {r}")));
            }
        }
        if self.methods.is_empty() {
            return Err(SmaError::Config("methods must not be empty".into()));
        }
        if !(self.gamma_cap > 0.0) {
            return Err(SmaError::Config("gamma_cap must be positive".into()));
        }
        if self.sir_dim == 0 {
            return Err(SmaError::Config("sir_dim must be positive".into()));
        }
        self.kernel.validate()?;
        self.sampler.validate()?;
        self.mechanism().validate()?;
        self.cqf().validate()
    }

    pub fn single_tau(&self) -> Result<QuantileLevel> {
        match self.tau.as_slice() {
            [t] => QuantileLevel::new(*t),
            _ => Err(SmaError::Config("this command takes a single tau".into())),
        }
    }

    pub fn mechanism(&self) -> MechanismConfig {
        MechanismConfig { gamma_cap: self.gamma_cap, lambda_n: self.lambda_n, ..MechanismConfig::default() }
    }

    pub fn cqf(&self) -> sma_core::cqf::CqfConfig {
        sma_core::cqf::CqfConfig { phi_n: self.phi_n, ..Default::default() }
    }

    pub fn sampler_seeded(&self) -> SamplerConfig {
        SamplerConfig { seed: self.seed, ..self.sampler }
    }

    pub fn design(&self, r_squared: f64) -> Design {
        if self.correlated {
            Design::Correlated { rho: self.rho, structure: self.covariance }
        } else {
            Design::Main { scenario: self.scenario, mechanism: self.case, r_squared }
        }
    }

    pub fn p_for(&self) -> usize {
        self.p.unwrap_or(if self.correlated { 300 } else { 5 * self.n })
    }

    /// Bench configuration for one `(r_squared, tau)` cell.
    pub fn sim_config(&self, r_squared: f64, tau: f64) -> SimConfig {
        let mut c = SimConfig::with_design(self.n, self.p_for(), self.design(r_squared), tau);
        c.replications = self.replications;
        c.test_size = self.test_size;
        c.seed = self.seed;
        c.screening = self.screening;
        c.gvi_threshold = self.gvi_threshold;
        c.sir_dim = self.sir_dim;
        c.kernel = self.kernel;
        c.sampler = self.sampler;
        c.mechanism = self.mechanism();
        c.cqf = self.cqf();
        c.cv_folds = self.cv_folds;
        c.threads = self.threads;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_key_is_accepted() {
        let samples = [
            ("seed", "3"),
            ("tau", "0.05, 0.5"),
            ("backend", "sampled"),
            ("lambda_n", "2.5"),
            ("phi_n", "default"),
            ("gamma_cap", "4"),
            ("bandwidth_scale", "1.2"),
            ("bandwidth_exponent", "-0.2"),
            ("sampler_iterations", "600"),
            ("sampler_keep", "60"),
            ("proposal_sd_scale", "4"),
            ("sir_dim", "1"),
            ("screening", "gps"),
            ("gvi_threshold", "min-nested"),
            ("methods", "SMA-s,saic"),
            ("threads", "2"),
            ("data", "d.csv"),
            ("fit", "f.txt"),
            ("mechanism_fit", "m.txt"),
            ("out", "o"),
            ("design", "correlated"),
            ("scenario", "II"),
            ("case", "b"),
            ("r_squared", "0.3,0.5"),
            ("rho", "0.2"),
            ("covariance", "cs"),
            ("n", "100"),
            ("p", "200"),
            ("replications", "3"),
            ("test_size", "20"),
            ("cv_folds", "4"),
        ];
        assert_eq!(samples.len(), KEYS.len());
        let mut c = RunConfig::default();
        for (k, v) in samples {
            assert!(KEYS.contains(&k));
            c.set(k, v).unwrap();
        }
        assert_eq!(c.methods, vec![Method::SmaS, Method::Saic]);
        assert_eq!(c.tau, vec![0.05, 0.5]);
        assert_eq!(c.gvi_threshold, GviThreshold::MinNested);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::resolve(Some("seed = 1\nbandwith = 2\n"), &[]).unwrap_err();
        assert!(matches!(err, SmaError::Parse { line: 2, .. }), "{err}");
        assert!(RunConfig::resolve(None, &[("nope".into(), "1".into())]).is_err());
    }

    #[test]
    fn file_syntax() {
        let pairs = parse_pairs("# header\n\n n = 5 # trailing\nseed=2\n").unwrap();
        assert_eq!(pairs, vec![(3, "n".into(), "5".into()), (4, "seed".into(), "2".into())]);
        assert!(matches!(parse_pairs("n 5").unwrap_err(), SmaError::Parse { line: 1, .. }));
        assert!(matches!(parse_pairs("n = 1\nn = 2").unwrap_err(), SmaError::Parse { line: 2, .. }));
    }

    #[test]
    fn precedence_matrix() {
        // (file value, flag value) -> expected
        for (file, flag, expected) in [
            (None, None, 0u64),
            (Some("7"), None, 7),
            (None, Some("9"), 9),
            (Some("7"), Some("9"), 9),
        ] {
            let text = file.map(|v| format!("seed = {v}\n"));
            let overrides: Vec<(String, String)> = flag.map(|v| ("seed".to_string(), v.to_string())).into_iter().collect();
            let c = RunConfig::resolve(text.as_deref(), &overrides).unwrap();
            assert_eq!(c.seed, expected, "file {file:?}, flag {flag:?}");
        }
    }

    #[test]
    fn ranges_are_checked() {
        assert!(RunConfig::resolve(Some("tau = 1.0"), &[]).is_err());
        assert!(RunConfig::resolve(Some("r_squared = 0"), &[]).is_err());
        assert!(RunConfig::resolve(Some("sampler_keep = 900"), &[]).is_err());
        assert!(RunConfig::resolve(Some("lambda_n = -1"), &[]).is_err());
    }

    #[test]
    fn default_dimension_follows_design() {
        let mut c = RunConfig::default();
        assert_eq!(c.p_for(), 400);
        c.correlated = true;
        assert_eq!(c.p_for(), 300);
        c.p = Some(50);
        assert_eq!(c.sim_config(0.5, 0.5).p, 50);
    }
}
