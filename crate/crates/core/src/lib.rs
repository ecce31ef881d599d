//! Semiparametric model averaging for linear quantile regression when the
//! response is missing not at random.
//!
//! The pipeline screens covariates into nested candidate sets, estimates the
//! respondents' conditional law by kernel smoothing (directly, or through
//! Metropolis draws), fits a logistic nonresponse model per candidate and
//! averages them under a penalized likelihood criterion, then fits and
//! averages candidate quantile models under a penalized, nonresponse-adjusted
//! check-loss criterion.

pub mod conditional;
pub mod baselines;
pub mod cqf;
pub mod data;
pub mod dcor;
pub mod dgp;
pub mod error;
pub mod kernel;
pub mod logistic;
pub mod loss;
pub mod mechanism;
pub mod optim;
pub mod pipeline;
pub mod qreg;
pub mod rng;
pub mod sampling;
pub mod screening;
pub mod simplex;
pub mod sir;

pub use data::Dataset;
pub use error::{Result, SmaError};
pub use kernel::KernelConfig;
pub use loss::{check_loss, QuantileLevel};
pub use simplex::{project_to_simplex, SimplexWeights};
