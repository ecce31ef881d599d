//! Quantile level and the check loss.

use crate::error::{Result, SmaError};

/// Probability level of a conditional quantile, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(SmaError::Config(format!("quantile level {tau} outside (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `u * (tau - 1{u <= 0})`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    check_loss_raw(u, tau.0)
}

/// Check loss for an arbitrary slope parameter in [0, 1]; `tau = 1` gives the
/// hinge `max(u, 0)`.
#[inline]
pub(crate) fn check_loss_raw(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        u * tau
    } else {
        u * (tau - 1.0)
    }
}

/// Mean check loss of `y - fitted`.
pub fn mean_check_loss(y: &[f64], fitted: &[f64], tau: QuantileLevel) -> f64 {
    debug_assert_eq!(y.len(), fitted.len());
    let total: f64 = y.iter().zip(fitted).map(|(a, b)| check_loss(a - b, tau)).sum();
    total / y.len() as f64
}
