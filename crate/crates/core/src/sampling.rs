//! Joint kernel density of `(B'x, y)` among respondents, random-walk
//! Metropolis draws from the implied conditional law of `y`, and the sampled
//! conditional expectations built on those draws.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::conditional::{log_sum_exp, Smoother};
use crate::data::Dataset;
use crate::error::{Result, SmaError};
use crate::kernel::{log_product_kernel, KernelConfig};
use crate::loss::check_loss_raw;
use crate::rng::stream;
use crate::sir::ReductionBasis;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub total_iterations: usize,
    pub keep_last: usize,
    /// Proposal standard deviation in units of the response bandwidth.
    pub proposal_sd_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { total_iterations: 500, keep_last: 50, proposal_sd_scale: 8.0, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep_last == 0 || self.keep_last > self.total_iterations {
            return Err(SmaError::Config(format!(
                "keep_last must lie in 1..={}, got {}",
                self.total_iterations, self.keep_last
            )));
        }
        if !(self.proposal_sd_scale > 0.0) || !self.proposal_sd_scale.is_finite() {
            return Err(SmaError::Config("proposal_sd_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDraws {
    /// Row `i` holds the retained chain states for unit `i`.
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rates: Vec<f64>,
}

impl ConditionalDraws {
    pub fn mean_acceptance(&self) -> f64 {
        if self.acceptance_rates.is_empty() {
            return 0.0;
        }
        self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len() as f64
    }
}

/// Unnormalized joint density `sum_j K_h((z - z_j, y - y_j))` over respondents,
/// in standardized predictor units.
#[derive(Debug, Clone)]
pub struct KdeJoint {
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    h_z: f64,
    h_y: f64,
}

impl KdeJoint {
    pub fn from_parts(z: Vec<Vec<f64>>, y: Vec<f64>, h_z: f64, h_y: f64) -> Result<Self> {
        if z.is_empty() || z.len() != y.len() {
            return Err(SmaError::Data("KDE needs matching nonempty predictor and response samples".into()));
        }
        if !(h_z > 0.0 && h_y > 0.0) {
            return Err(SmaError::Config("KDE bandwidths must be positive".into()));
        }
        Ok(Self { z, y, h_z, h_y })
    }

    /// Builds the evaluator from the respondents of `data`; also returns the
    /// smoother so callers can look up each unit's standardized predictor.
    pub fn new(data: &Dataset, basis: &ReductionBasis, kcfg: &KernelConfig) -> Result<(Self, Smoother)> {
        if data.respondent_count() < 10 {
            return Err(SmaError::Data(format!(
                "kernel density needs at least 10 respondents, got {}",
                data.respondent_count()
            )));
        }
        let sm = Smoother::new(data, basis, kcfg)?;
        let z = sm.respondents.iter().map(|&j| sm.z[j].clone()).collect();
        let y = sm.respondents.iter().map(|&j| data.y()[j]).collect();
        Ok((Self::from_parts(z, y, sm.h_z, sm.h_y)?, sm))
    }

    pub fn h_y(&self) -> f64 {
        self.h_y
    }

    /// Log-weights of the predictor part at `z_star`.
    pub fn predictor_log_weights(&self, z_star: &[f64]) -> Vec<f64> {
        self.z.iter().map(|zj| log_product_kernel(z_star, zj, self.h_z)).collect()
    }

    pub fn evaluate(&self, z_star: &[f64], y: f64) -> f64 {
        let lw = self.predictor_log_weights(z_star);
        log_sum_exp(&self.joint_terms(&lw, y)).exp()
    }

    fn joint_terms(&self, lw: &[f64], y: f64) -> Vec<f64> {
        lw.iter()
            .zip(&self.y)
            .map(|(w, yj)| {
                let u = (y - yj) / self.h_y;
                w - 0.5 * u * u
            })
            .collect()
    }

    /// Normalized conditional density of `y` at `z_star`: a Gaussian mixture
    /// centred on respondent responses.
    pub fn conditional_density(&self, z_star: &[f64], y: f64) -> f64 {
        let lw = self.predictor_log_weights(z_star);
        let norm = log_sum_exp(&lw);
        let c = -0.5 * (2.0 * std::f64::consts::PI).ln() - self.h_y.ln();
        (log_sum_exp(&self.joint_terms(&lw, y)) - norm + c).exp()
    }

    /// Index of the respondent nearest to `z_star`.
    pub fn nearest(&self, z_star: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, zj) in self.z.iter().enumerate() {
            let d: f64 = zj.iter().zip(z_star).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }

    /// One Metropolis chain targeting the conditional law at `z_star`.
    pub fn chain(&self, z_star: &[f64], cfg: &SamplerConfig, unit: u64) -> (Vec<f64>, f64) {
        let mut rng = stream(cfg.seed, &[0x5a4d_504c, unit]);
        let lw_full = self.predictor_log_weights(z_star);
        let m = lw_full.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Drop respondents whose kernel weight is negligible.
        let keep: Vec<usize> = (0..lw_full.len()).filter(|&j| lw_full[j] - m > -40.0).collect();
        let lw: Vec<f64> = keep.iter().map(|&j| lw_full[j]).collect();
        let ys: Vec<f64> = keep.iter().map(|&j| self.y[j]).collect();
        let log_target = |y: f64| {
            let t: Vec<f64> = lw
                .iter()
                .zip(&ys)
                .map(|(w, yj)| {
                    let u = (y - yj) / self.h_y;
                    w - 0.5 * u * u
                })
                .collect();
            log_sum_exp(&t)
        };
        let sd = cfg.proposal_sd_scale * self.h_y;
        let mut cur = self.y[self.nearest(z_star)];
        let mut cur_lt = log_target(cur);
        if !cur_lt.is_finite() {
            log::warn!("conditional density vanishes for unit {unit}; resampling respondents");
            return (self.fallback(&lw_full, cfg.keep_last, &mut rng), 0.0);
        }
        let burn = cfg.total_iterations - cfg.keep_last;
        let mut kept = Vec::with_capacity(cfg.keep_last);
        let mut accepted = 0usize;
        for it in 0..cfg.total_iterations {
            let prop = cur + sd * rng.sample::<f64, _>(StandardNormal);
            let lt = log_target(prop);
            let u: f64 = rng.random();
            if lt.is_finite() && u.ln() < lt - cur_lt {
                cur = prop;
                cur_lt = lt;
                accepted += 1;
            }
            if it >= burn {
                kept.push(cur);
            }
        }
        (kept, accepted as f64 / cfg.total_iterations as f64)
    }

    fn fallback(&self, lw: &[f64], l: usize, rng: &mut impl Rng) -> Vec<f64> {
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = if m.is_finite() { lw.iter().map(|v| (v - m).exp()).collect() } else { vec![1.0; lw.len()] };
        let total: f64 = w.iter().sum();
        (0..l)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                for (j, wj) in w.iter().enumerate() {
                    u -= wj;
                    if u <= 0.0 {
                        return self.y[j];
                    }
                }
                *self.y.last().unwrap()
            })
            .collect()
    }
}

/// Draws from the estimated respondent law of `y` given `B'x_i` for every unit.
pub fn sample_conditional(
    data: &Dataset,
    basis: &ReductionBasis,
    cfg: &SamplerConfig,
    kcfg: &KernelConfig,
) -> Result<ConditionalDraws> {
    cfg.validate()?;
    let (kde, sm) = KdeJoint::new(data, basis, kcfg)?;
    let mut draws = Vec::with_capacity(data.n());
    let mut acceptance_rates = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let (d, a) = kde.chain(&sm.z[i], cfg, i as u64);
        draws.push(d);
        acceptance_rates.push(a);
    }
    Ok(ConditionalDraws { draws, acceptance_rates })
}

/// `log{L^-1 sum_l exp(gamma * y_l)}`.
pub fn m1_sampled(draws: &[f64], gamma: f64) -> f64 {
    let t: Vec<f64> = draws.iter().map(|v| gamma * v).collect();
    log_sum_exp(&t) - (draws.len() as f64).ln()
}

/// `sum_l exp(gamma y_l) rho_tau(y_l - fitted) / sum_l exp(gamma y_l)`.
pub fn m0_sampled(draws: &[f64], gamma: f64, fitted: f64, tau: f64) -> f64 {
    let m = draws.iter().map(|v| gamma * v).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for v in draws {
        let w = (gamma * v - m).exp();
        num += w * check_loss_raw(v - fitted, tau);
        den += w;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampled_expectation_values() {
        assert_eq!(m1_sampled(&[0.3, -2.0, 5.0], 0.0), 0.0);
        assert!((m1_sampled(&[1.7; 4], 2.0) - 3.4).abs() < 1e-12);
        assert!((m1_sampled(&[0.0, 1.0], 1.0) - 0.62011).abs() < 1e-5);
        assert!((m0_sampled(&[2.5; 3], 1.3, 1.0, 0.3) - 0.45).abs() < 1e-12);
        assert!((m0_sampled(&[0.0, 2.0], 1.0, 1.0, 0.5) - 0.5).abs() < 1e-12);
        let flat = m0_sampled(&[0.0, 1.0, 4.0], 0.0, 1.0, 0.25);
        assert!((flat - (0.75 + 0.0 + 0.75) / 3.0).abs() < 1e-12);
        assert!(m1_sampled(&[800.0, 801.0], 1.0).is_finite());
    }

    #[test]
    fn one_point_kde_peaks_at_the_point() {
        let k = KdeJoint::from_parts(vec![vec![0.0]], vec![2.0], 0.5, 0.3).unwrap();
        let at = k.evaluate(&[0.0], 2.0);
        assert!(at > k.evaluate(&[0.0], 2.1) && at > k.evaluate(&[0.0], 1.9));
        assert!(k.evaluate(&[3.0], 9.0) >= 0.0);
    }

    #[test]
    fn point_mass_limit() {
        let k = KdeJoint::from_parts(vec![vec![0.0]], vec![2.0], 0.5, 1e-3).unwrap();
        let (d, _) = k.chain(&[0.0], &SamplerConfig::default(), 0);
        assert!(d.iter().all(|v| (v - 2.0).abs() < 0.01));
    }

    proptest! {
        #[test]
        fn m1_sampled_convex_in_gamma(d in prop::collection::vec(-3.0..3.0f64, 1..20), a in -4.0..4.0f64, b in -4.0..4.0f64, t in 0.0..1.0f64) {
            let mid = m1_sampled(&d, t * a + (1.0 - t) * b);
            prop_assert!(mid <= t * m1_sampled(&d, a) + (1.0 - t) * m1_sampled(&d, b) + 1e-10);
        }

        #[test]
        fn m1_sampled_monotone_for_nonnegative_draws(d in prop::collection::vec(0.0..3.0f64, 1..20), a in -4.0..4.0f64, step in 0.0..2.0f64) {
            prop_assert!(m1_sampled(&d, a + step) >= m1_sampled(&d, a) - 1e-12);
        }

        #[test]
        fn m0_sampled_convex_in_fitted(d in prop::collection::vec(-3.0..3.0f64, 1..20), g in -2.0..2.0f64, a in -4.0..4.0f64, b in -4.0..4.0f64, t in 0.0..1.0f64, tau in 0.01..0.99f64) {
            let mid = m0_sampled(&d, g, t * a + (1.0 - t) * b, tau);
            prop_assert!(mid >= 0.0);
            prop_assert!(mid <= t * m0_sampled(&d, g, a, tau) + (1.0 - t) * m0_sampled(&d, g, b, tau) + 1e-10);
        }
    }
}
