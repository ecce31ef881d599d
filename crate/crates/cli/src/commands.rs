//! Subcommand bodies. Each takes a resolved [`RunConfig`].

use std::path::{Path, PathBuf};

use sma_core::dgp::{apply_missingness, DgpSpec};
use sma_core::mechanism::fit_mechanism;
use sma_core::cqf::fit_cqf;
use sma_core::pipeline::{fit_with_support, prepare_support, SmaConfig};
use sma_core::rng::stream;
use sma_core::screening::{build_nested, dcsis_screen, gps_algorithm, ps_algorithm, screening_size, NestedCandidates};
use sma_core::{Dataset, Result, SmaError};
use sma_simbench::{reps_csv, run_bench, summary_csv, FprReport, ScreeningMode};

use crate::config::RunConfig;
use crate::csvio::{fmt_f64, load_csv, save_csv};
use crate::persist::{load_cqf, load_mechanism, save_fit, FitMeta, SavedCqf, SavedFit, SavedMechanism};
use crate::plots::emit_plots;
use crate::atomic_write;

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| SmaError::Usage(format!("missing {key} (set --{key} or `{key}` in the config)")))
}

/// One dataset of size `n` with missingness, drawn from the configured design.
pub fn simulate(cfg: &RunConfig) -> Result<Dataset> {
    let spec = DgpSpec { n: cfg.n, p: cfg.p_for(), design: cfg.design(cfg.r_squared[0]), tau: cfg.single_tau()?.value() };
    let truth = spec.truth()?;
    let mut rng = stream(cfg.seed, &[]);
    let (x, y, _) = spec.draw(&truth, cfg.n, &mut rng);
    apply_missingness(&Dataset::complete(x, y)?, &truth.mechanism, &mut rng)
}

pub fn run_simulate(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let d = simulate(cfg)?;
    log::info!("simulated n = {}, p = {}, missing rate {:.3}, seed {}", d.n(), d.p(), d.missing_rate(), cfg.seed);
    save_csv(out, &d)
}

/// Nested candidates from the configured screening mode.
pub fn candidates(data: &Dataset, cfg: &RunConfig) -> Result<NestedCandidates> {
    let d_n = screening_size(data.n()).max(1);
    let ordered = match cfg.screening {
        ScreeningMode::Dcsis => dcsis_screen(data)?.ordered_indices,
        ScreeningMode::Ps => ps_algorithm(data, d_n, cfg.gvi_threshold)?.indices,
        ScreeningMode::Gps => gps_algorithm(data, d_n, cfg.gvi_threshold)?.indices,
    };
    build_nested(&ordered)
}

fn names(indices: &[usize]) -> String {
    indices.iter().map(|j| format!("x{}", j + 1)).collect::<Vec<_>>().join(" ")
}

pub fn candidates_csv(c: &NestedCandidates) -> String {
    let mut s = String::from("candidate,size,covariates\n");
    for (k, set) in c.index_sets.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", k + 1, set.len(), names(set)));
    }
    s
}

pub fn run_screen(cfg: &RunConfig) -> Result<()> {
    let data = load_csv(required(&cfg.data, "data")?)?;
    let c = candidates(&data, cfg)?;
    log::info!("{} screening kept {} covariates in {} candidates", cfg.screening.name(), c.largest().len(), c.len());
    atomic_write(required(&cfg.out, "out")?, candidates_csv(&c).as_bytes())
}

fn sma_config(cfg: &RunConfig) -> Result<SmaConfig> {
    let mut s = SmaConfig::new(cfg.single_tau()?);
    s.backend = cfg.backend;
    s.sir_dim = cfg.sir_dim;
    s.kernel = cfg.kernel;
    s.sampler = cfg.sampler_seeded();
    s.mechanism = cfg.mechanism();
    s.cqf = cfg.cqf();
    Ok(s)
}

pub fn fit_mechanism_cmd(data: &Dataset, cfg: &RunConfig) -> Result<SavedMechanism> {
    let cands = candidates(data, cfg)?;
    let smoothing = cands.largest().to_vec();
    let s = sma_config(cfg)?;
    let prep = prepare_support(data, &smoothing, &s)?;
    let fit = fit_mechanism(data, &prep.support, &cands, &smoothing, &s.mechanism)?;
    if fit.identifiability_warning {
        log::warn!("the largest candidate uses every smoothing covariate; the tilt is weakly identified");
    }
    Ok(SavedMechanism { meta: FitMeta { backend: cfg.backend, seed: cfg.seed }, fit })
}

pub fn run_fit_mechanism(cfg: &RunConfig) -> Result<()> {
    let data = load_csv(required(&cfg.data, "data")?)?;
    let saved = fit_mechanism_cmd(&data, cfg)?;
    log::info!("gamma = {:.4}, weights {:?}", saved.fit.combined.gamma, saved.fit.weights.as_slice());
    save_fit(required(&cfg.out, "out")?, &SavedFit::Mechanism(saved))
}

/// Quantile averaging; reuses the tilt of `mechanism` when given.
pub fn fit_cqf_cmd(data: &Dataset, cfg: &RunConfig, mechanism: Option<&SavedMechanism>) -> Result<SavedCqf> {
    let cands = candidates(data, cfg)?;
    let smoothing = cands.largest().to_vec();
    let s = sma_config(cfg)?;
    let prep = prepare_support(data, &smoothing, &s)?;
    let (gamma, fit) = match mechanism {
        Some(m) => {
            let gamma = m.fit.combined.gamma;
            (gamma, fit_cqf(data, &prep.support.tilted_exp(gamma), &cands, s.tau, &s.cqf)?)
        }
        None => {
            let (mech, _, cqf) = fit_with_support(data, &prep.support, &smoothing, &cands, &cands, &s)?;
            (mech.combined.gamma, cqf)
        }
    };
    Ok(SavedCqf { meta: FitMeta { backend: cfg.backend, seed: cfg.seed }, gamma, fit })
}

pub fn run_fit_cqf(cfg: &RunConfig) -> Result<()> {
    let data = load_csv(required(&cfg.data, "data")?)?;
    let mech = cfg.mechanism_fit.as_deref().map(load_mechanism).transpose()?;
    let saved = fit_cqf_cmd(&data, cfg, mech.as_ref())?;
    log::info!("cqf weights {:?}", saved.fit.weights.as_slice());
    save_fit(required(&cfg.out, "out")?, &SavedFit::Cqf(saved))
}

pub fn predictions(fit: &SavedCqf, data: &Dataset) -> Result<Vec<f64>> {
    let mut row = vec![0.0; data.p()];
    (0..data.n())
        .map(|i| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = data.x_at(i, j);
            }
            fit.fit.predict(&row)
        })
        .collect()
}

pub fn run_predict(cfg: &RunConfig) -> Result<()> {
    let fit = load_cqf(required(&cfg.fit, "fit")?)?;
    let data = load_csv(required(&cfg.data, "data")?)?;
    let mut s = String::from("row,prediction\n");
    for (i, v) in predictions(&fit, &data)?.into_iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, fmt_f64(v)));
    }
    atomic_write(required(&cfg.out, "out")?, s.as_bytes())
}

/// One report per `(r_squared, tau)` cell; the correlated design has no R²
/// axis.
pub fn bench(cfg: &RunConfig) -> Result<Vec<FprReport>> {
    let r2s: &[f64] = if cfg.correlated { &cfg.r_squared[..1] } else { &cfg.r_squared };
    let mut reports = Vec::new();
    for &tau in &cfg.tau {
        for &r2 in r2s {
            let sim = cfg.sim_config(r2, tau);
            let report = run_bench(&sim, &cfg.methods)?;
            let (design, scenario, case, r2l, rho) = sim.labels();
            log::info!(
                "{design} {scenario} {case} R2={r2l} rho={rho} tau={tau}: missing rate {:.3}, {} skipped, seed {}",
                report.missing_rate,
                report.skipped,
                cfg.seed
            );
            reports.push(report);
        }
    }
    Ok(reports)
}

pub fn run_bench_cmd(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let reports = bench(cfg)?;
    std::fs::create_dir_all(out)?;
    atomic_write(&out.join("summary.csv"), summary_csv(&reports).as_bytes())?;
    atomic_write(&out.join("reps.csv"), reps_csv(&reports).as_bytes())?;
    emit_plots(&reports, &cfg.methods, &out.join("plots"))?;
    Ok(())
}
