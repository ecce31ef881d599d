//! Monte-Carlo benchmarks comparing the averaging estimators with their
//! competitors on simulated MNAR data.

pub mod config;
pub mod engine;
pub mod report;

use rayon::prelude::*;
use sma_core::{Result, SmaError};

pub use config::{Method, ScreeningMode, SimConfig};
pub use engine::{run_replication, Outcome, RepResult};
pub use report::{aggregate, reps_csv, summary_csv, FprReport, MethodSummary};

/// Runs every replication of `cfg`. Results do not depend on the thread
/// count: each replication owns its seeds and aggregation is in rep order.
pub fn run_bench(cfg: &SimConfig, methods: &[Method]) -> Result<FprReport> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(SmaError::Config("no methods requested".into()));
    }
    let truth = cfg.spec().truth()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| SmaError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RepResult>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(cfg, &truth, methods, rep))
            .collect()
    });
    let mut reps = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => reps.push(r),
            Err(e) => {
                log::warn!("replication {rep} skipped: {e}");
                skipped += 1;
            }
        }
    }
    if reps.is_empty() {
        return Err(SmaError::Numerical(format!("all {skipped} replications failed")));
    }
    Ok(aggregate(cfg, methods, reps, skipped))
}
