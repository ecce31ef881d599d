//! The respondents' conditional law of `y` given the reduced predictor, in a
//! form shared by both estimation backends.
//!
//! For every unit `i` the law is a finite support of values with normalized
//! log-weights: respondent responses with kernel weights (kernel backend) or
//! Metropolis draws with equal weights (sampled backend). Exponential tilts of
//! this support give `m1` and the nonrespondents' conditional check risk `M0`.

use crate::data::Dataset;
use crate::error::{Result, SmaError};
use crate::kernel::{bandwidth, log_product_kernel, sample_sd, KernelConfig, Standardizer};
use crate::loss::check_loss_raw;
use crate::sampling::ConditionalDraws;
use crate::sir::ReductionBasis;

/// Log-weights more than this far below a unit's maximum are dropped.
const LOG_PRUNE: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Kernel,
    Sampled,
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Standardized reduced predictors and the kernel bandwidths.
#[derive(Debug, Clone)]
pub struct Smoother {
    pub z: Vec<Vec<f64>>,
    pub h_z: f64,
    pub h_y: f64,
    pub respondents: Vec<usize>,
}

impl Smoother {
    pub fn new(data: &Dataset, basis: &ReductionBasis, kcfg: &KernelConfig) -> Result<Self> {
        let respondents = data.respondents();
        if respondents.is_empty() {
            return Err(SmaError::Data("no respondents to smooth over".into()));
        }
        let raw = basis.project(data);
        let st = Standardizer::fit(&raw)?;
        let z: Vec<Vec<f64>> = raw.iter().map(|r| st.apply(r)).collect();
        let yr: Vec<f64> = respondents.iter().map(|&i| data.y()[i]).collect();
        let sd_y = sample_sd(&yr);
        let h_z = bandwidth(1.0, data.n(), kcfg)?;
        let h_y = bandwidth(if sd_y > 0.0 { sd_y } else { 1.0 }, data.n(), kcfg)?;
        Ok(Self { z, h_z, h_y, respondents })
    }

    /// `log K((z_i - z_j) / h)` over all units `j`, unnormalized.
    pub fn log_kernel_row(&self, i: usize) -> Vec<f64> {
        self.z.iter().map(|zj| log_product_kernel(&self.z[i], zj, self.h_z)).collect()
    }
}

/// One unit's conditional support.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLaw {
    pub values: Vec<f64>,
    /// Log-weights with `log_sum_exp = 0`.
    pub logw: Vec<f64>,
    /// Additive constant in `m1` (kernel backend only).
    pub offset: f64,
}

impl UnitLaw {
    fn from_log_weights(values: Vec<f64>, logw: Vec<f64>, offset: f64) -> Self {
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (v, w): (Vec<f64>, Vec<f64>) =
            values.into_iter().zip(logw).filter(|(_, w)| *w - m > LOG_PRUNE).unzip();
        let lse = log_sum_exp(&w);
        Self { values: v, logw: w.into_iter().map(|x| x - lse).collect(), offset }
    }

    /// `offset + log sum_l w_l exp(gamma * v_l)`.
    pub fn m1(&self, gamma: f64) -> f64 {
        let t: Vec<f64> = self.logw.iter().zip(&self.values).map(|(w, v)| w + gamma * v).collect();
        self.offset + log_sum_exp(&t)
    }

    /// Normalized weights after adding `log_tilt(v)`.
    pub fn tilt(&self, log_tilt: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        let t: Vec<f64> = self.logw.iter().zip(&self.values).map(|(w, v)| w + log_tilt(*v)).collect();
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        self.values
            .iter()
            .zip(e)
            .map(|(v, w)| (*v, w / s))
            .filter(|(_, w)| *w > 0.0)
            .collect()
    }
}

/// How the kernel `m1` treats the local response rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelForm {
    /// Kernel sums over all units in the denominator, minus the log of the
    /// overall response rate.
    #[default]
    Literal,
    /// Nadaraya-Watson average over respondents only:
    /// `log E[exp(g y) | x, r = 1]` without any rate term.
    Conditional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSupport {
    pub backend: Backend,
    pub units: Vec<UnitLaw>,
}

impl ConditionalSupport {
    /// Kernel backend: `m1(x_i; g) = log[sum_j r_j e^{g y_j} K_ij / sum_j K_ij] - log(r_bar)`.
    pub fn kernel(data: &Dataset, smoother: &Smoother) -> Result<Self> {
        Self::kernel_with_form(data, smoother, KernelForm::Literal)
    }

    pub fn kernel_with_form(data: &Dataset, smoother: &Smoother, form: KernelForm) -> Result<Self> {
        let n = data.n();
        let log_rbar = (smoother.respondents.len() as f64 / n as f64).ln();
        let yr: Vec<f64> = smoother.respondents.iter().map(|&j| data.y()[j]).collect();
        let units = (0..n)
            .map(|i| {
                let row = smoother.log_kernel_row(i);
                let lw: Vec<f64> = smoother.respondents.iter().map(|&j| row[j]).collect();
                let offset = match form {
                    KernelForm::Literal => log_sum_exp(&lw) - log_sum_exp(&row) - log_rbar,
                    KernelForm::Conditional => 0.0,
                };
                UnitLaw::from_log_weights(yr.clone(), lw, offset)
            })
            .collect();
        Ok(Self { backend: Backend::Kernel, units })
    }

    pub fn sampled(draws: &ConditionalDraws) -> Self {
        let units = draws
            .draws
            .iter()
            .map(|d| {
                let lw = vec![-(d.len() as f64).ln(); d.len()];
                UnitLaw { values: d.clone(), logw: lw, offset: 0.0 }
            })
            .collect();
        Self { backend: Backend::Sampled, units }
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn m1(&self, i: usize, gamma: f64) -> f64 {
        self.units[i].m1(gamma)
    }

    pub fn m1_all(&self, gamma: f64) -> Vec<f64> {
        self.units.iter().map(|u| u.m1(gamma)).collect()
    }

    /// Exponential tilt `exp(gamma * y)`.
    pub fn tilted_exp(&self, gamma: f64) -> TiltedLaw {
        self.tilted(|_, v| gamma * v)
    }

    /// Arbitrary log-odds tilt `log{(1 - pi(x_i, y)) / pi(x_i, y)}` up to a
    /// per-unit constant.
    pub fn tilted(&self, log_tilt: impl Fn(usize, f64) -> f64) -> TiltedLaw {
        TiltedLaw { units: self.units.iter().enumerate().map(|(i, u)| u.tilt(|v| log_tilt(i, v))).collect() }
    }
}

/// Per-unit `(value, weight)` pairs with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedLaw {
    pub units: Vec<Vec<(f64, f64)>>,
}

impl TiltedLaw {
    /// Tilted mean check loss `sum_l w_l rho_tau(v_l - fitted)`.
    pub fn m0(&self, i: usize, fitted: f64, tau: f64) -> f64 {
        self.units[i].iter().map(|&(v, w)| w * check_loss_raw(v - fitted, tau)).sum()
    }
}

/// Kernel estimate of `m1` at one unit.
pub fn m1_kernel(data: &Dataset, basis: &ReductionBasis, gamma: f64, kcfg: &KernelConfig, i: usize) -> Result<f64> {
    let sm = Smoother::new(data, basis, kcfg)?;
    let n = data.n();
    if i >= n {
        return Err(SmaError::Dimension { expected: n, got: i });
    }
    let row = sm.log_kernel_row(i);
    let num: Vec<f64> = sm.respondents.iter().map(|&j| row[j] + gamma * data.y()[j]).collect();
    Ok(log_sum_exp(&num) - log_sum_exp(&row) - (sm.respondents.len() as f64 / n as f64).ln())
}

/// Kernel estimate of the tilted conditional check risk at one unit.
pub fn m0_kernel(
    data: &Dataset,
    basis: &ReductionBasis,
    gamma: f64,
    fitted: f64,
    tau: f64,
    kcfg: &KernelConfig,
    i: usize,
) -> Result<f64> {
    let sm = Smoother::new(data, basis, kcfg)?;
    if i >= data.n() {
        return Err(SmaError::Dimension { expected: data.n(), got: i });
    }
    let row = sm.log_kernel_row(i);
    let yr: Vec<f64> = sm.respondents.iter().map(|&j| data.y()[j]).collect();
    let lw: Vec<f64> = sm.respondents.iter().map(|&j| row[j]).collect();
    let law = UnitLaw::from_log_weights(yr, lw, 0.0);
    Ok(law.tilt(|v| gamma * v).iter().map(|&(v, w)| w * check_loss_raw(v - fitted, tau)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn line_data() -> (Dataset, ReductionBasis) {
        // respondent 0 is isolated; the other 29 units share one location
        let x = DMatrix::from_fn(30, 1, |i, _| if i == 0 { 0.0 } else { 1.0 });
        let y: Vec<f64> = (0..30).map(|i| if i == 0 { 1.3 } else { i as f64 }).collect();
        let r: Vec<bool> = (0..30).map(|i| i % 3 != 1).collect();
        (Dataset::new(x, y, r).unwrap(), ReductionBasis::identity(&[0]))
    }

    #[test]
    fn single_point_kernel_sum() {
        let (d, b) = line_data();
        let m = m1_kernel(&d, &b, 1.0, &KernelConfig::default(), 0).unwrap();
        let rbar: f64 = 20.0 / 30.0;
        assert!((m - (1.3 - rbar.ln())).abs() < 1e-9, "{m}");
        let m0 = m0_kernel(&d, &b, 1.0, 0.3, 0.5, &KernelConfig::default(), 0).unwrap();
        assert!((m0 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn untilted_kernel_risk_matches_direct_sum() {
        let x = DMatrix::from_fn(40, 1, |i, _| ((i * 37) % 40) as f64 / 7.0);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let r: Vec<bool> = (0..40).map(|i| i % 3 != 0).collect();
        let d = Dataset::new(x, y, r).unwrap();
        let b = ReductionBasis::identity(&[0]);
        let kcfg = KernelConfig::default();
        let sm = Smoother::new(&d, &b, &kcfg).unwrap();
        for i in [0, 5, 17] {
            let got = m0_kernel(&d, &b, 0.0, 0.4, 0.3, &kcfg, i).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for &j in &sm.respondents {
                let u = (sm.z[i][0] - sm.z[j][0]) / sm.h_z;
                let k = (-0.5 * u * u).exp();
                num += k * check_loss_raw(d.y()[j] - 0.4, 0.3);
                den += k;
            }
            assert!((got - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn forms_differ_by_local_rate() {
        let (d, b) = line_data();
        let sm = Smoother::new(&d, &b, &KernelConfig::default()).unwrap();
        let lit = ConditionalSupport::kernel(&d, &sm).unwrap();
        let cond = ConditionalSupport::kernel_with_form(&d, &sm, KernelForm::Conditional).unwrap();
        // units 1..30 sit together; unit 0 is far enough to carry no weight
        let local = 19.0 / 29.0;
        let rbar = 20.0 / 30.0;
        for i in [3, 10] {
            let gap = lit.m1(i, 0.7) - cond.m1(i, 0.7);
            assert!((gap - (local / rbar as f64).ln()).abs() < 1e-9, "{gap}");
        }
        assert_eq!(cond.m1(4, 0.0), 0.0);
    }

    #[test]
    fn tilt_weights_normalize() {
        let u = UnitLaw::from_log_weights(vec![0.0, 1.0, 5.0], vec![-1.0, 0.0, -2.0], 0.0);
        for g in [-3.0, 0.0, 2.5, 40.0] {
            let s: f64 = u.tilt(|v| g * v).iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
