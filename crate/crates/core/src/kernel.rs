//! Gaussian product kernel, the bandwidth rule and the standardization applied
//! to every smoothing input.

use std::f64::consts::PI;

use crate::error::{Result, SmaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth_scale: f64,
    pub bandwidth_exponent: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth_scale: 1.5,
            bandwidth_exponent: -1.0 / 3.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_scale > 0.0) || !self.bandwidth_scale.is_finite() {
            return Err(SmaError::Config(format!(
                "bandwidth scale must be positive, got {}",
                self.bandwidth_scale
            )));
        }
        if !self.bandwidth_exponent.is_finite() {
            return Err(SmaError::Config("bandwidth exponent must be finite".into()));
        }
        Ok(())
    }
}

/// Standard multivariate normal density `(2 pi)^(-d/2) exp(-|u|^2 / 2)`.
pub fn gaussian_kernel(u: &[f64]) -> f64 {
    log_gaussian_kernel(u).exp()
}

pub fn log_gaussian_kernel(u: &[f64]) -> f64 {
    let d = u.len() as f64;
    let sq: f64 = u.iter().map(|v| v * v).sum();
    -0.5 * d * (2.0 * PI).ln() - 0.5 * sq
}

/// `scale * n^exponent * data_sd`.
pub fn bandwidth(data_sd: f64, n: usize, cfg: &KernelConfig) -> Result<f64> {
    cfg.validate()?;
    if !(data_sd > 0.0) || !data_sd.is_finite() {
        return Err(SmaError::Degenerate(format!(
            "bandwidth needs a positive standard deviation, got {data_sd}"
        )));
    }
    if n < 2 {
        return Err(SmaError::Degenerate("bandwidth needs at least two observations".into()));
    }
    let h = cfg.bandwidth_scale * (n as f64).powf(cfg.bandwidth_exponent) * data_sd;
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(SmaError::Degenerate(format!("bandwidth evaluated to {h}")))
    }
}

/// Per-coordinate centering and scaling learned from a reference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits on rows of a row-major `n x d` buffer. A coordinate with zero spread
    /// keeps unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(SmaError::Empty("standardizer needs at least one row"));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut sd = vec![0.0; d];
        for row in rows {
            for ((s, v), m) in sd.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        for s in sd.iter_mut() {
            *s = (*s / denom).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Log of the product Gaussian kernel `prod_j K((a_j - b_j) / h)`, without the
/// normalizing constant (only ratios are used downstream).
#[inline]
pub(crate) fn log_product_kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let mut sq = 0.0;
    for (u, v) in a.iter().zip(b) {
        let z = (u - v) / h;
        sq += z * z;
    }
    -0.5 * sq
}
