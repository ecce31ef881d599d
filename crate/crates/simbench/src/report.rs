use std::fmt::Write as _;

use crate::config::{Method, SimConfig};
use crate::engine::RepResult;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
    count: usize,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.total() / self.count as f64
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut s = CompensatedSum::default();
    values.iter().for_each(|v| s.add(*v));
    let m = s.mean();
    if values.len() < 2 {
        return (m, 0.0);
    }
    let mut q = CompensatedSum::default();
    values.iter().for_each(|v| q.add((v - m) * (v - m)));
    (m, (q.total() / (values.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub ok: usize,
    pub failures: usize,
    pub mean_fpr: f64,
    pub sd_fpr: f64,
    /// Mean over replications of `FPR / normalizer`.
    pub mean_nfpr: f64,
    pub sd_nfpr: f64,
    /// `mean FPR / mean normalizer` over the same replications.
    pub nfpr_of_means: f64,
    pub mean_ms: f64,
    pub mean_fp: f64,
    pub mean_fn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FprReport {
    pub config: SimConfig,
    pub methods: Vec<MethodSummary>,
    pub missing_rate: f64,
    pub mean_normalizer: f64,
    /// Replications that failed before any method ran.
    pub skipped: usize,
    pub reps: Vec<RepResult>,
}

impl FprReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Mean normalized FPR of `m`, NaN when absent.
    pub fn nfpr(&self, m: Method) -> f64 {
        self.method(m).map_or(f64::NAN, |s| s.mean_nfpr)
    }

    pub fn fpr(&self, m: Method) -> f64 {
        self.method(m).map_or(f64::NAN, |s| s.mean_fpr)
    }
}

/// Aggregates in replication order regardless of how `reps` were produced.
pub fn aggregate(config: &SimConfig, methods: &[Method], mut reps: Vec<RepResult>, skipped: usize) -> FprReport {
    reps.sort_by_key(|r| r.rep);
    let missing: Vec<f64> = reps.iter().map(|r| r.missing_rate).collect();
    let norms: Vec<f64> = reps.iter().map(|r| r.normalizer).collect();
    let summaries = methods
        .iter()
        .map(|&m| {
            let mut fpr = Vec::new();
            let mut nfpr = Vec::new();
            let mut norm = Vec::new();
            let (mut ms, mut fp, mut fn_) = (Vec::new(), Vec::new(), Vec::new());
            let mut failures = 0;
            for r in &reps {
                match r.outcomes.iter().find(|o| o.0 == m).map(|o| &o.1) {
                    Some(Ok(o)) => {
                        fpr.push(o.fpr);
                        nfpr.push(o.fpr / r.normalizer);
                        norm.push(r.normalizer);
                        ms.push(o.ms as f64);
                        fp.push(o.fp as f64);
                        fn_.push(o.fn_ as f64);
                    }
                    _ => failures += 1,
                }
            }
            let (mean_fpr, sd_fpr) = mean_sd(&fpr);
            let (mean_nfpr, sd_nfpr) = mean_sd(&nfpr);
            MethodSummary {
                method: m,
                ok: fpr.len(),
                failures,
                mean_fpr,
                sd_fpr,
                mean_nfpr,
                sd_nfpr,
                nfpr_of_means: mean_fpr / mean_sd(&norm).0,
                mean_ms: mean_sd(&ms).0,
                mean_fp: mean_sd(&fp).0,
                mean_fn: mean_sd(&fn_).0,
            }
        })
        .collect();
    FprReport {
        config: config.clone(),
        methods: summaries,
        missing_rate: mean_sd(&missing).0,
        mean_normalizer: mean_sd(&norms).0,
        skipped,
        reps,
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

pub const SUMMARY_HEADER: &str = "method,n,p,design,scenario,case,r_squared,rho,tau,replications,ok,failures,skipped,\
mean_fpr,sd_fpr,mean_nfpr,sd_nfpr,nfpr_of_means,missing_rate,mean_normalizer,ms,fp,fn";

/// Summary rows keyed by method and configuration.
pub fn summary_rows(report: &FprReport) -> Vec<String> {
    let c = &report.config;
    let (design, scenario, case, r2, rho) = c.labels();
    report
        .methods
        .iter()
        .map(|s| {
            [
                s.method.name().to_string(),
                c.n.to_string(),
                c.p.to_string(),
                design.clone(),
                scenario.clone(),
                case.clone(),
                r2.clone(),
                rho.clone(),
                format!("{}", c.tau),
                c.replications.to_string(),
                s.ok.to_string(),
                s.failures.to_string(),
                report.skipped.to_string(),
                num(s.mean_fpr),
                num(s.sd_fpr),
                num(s.mean_nfpr),
                num(s.sd_nfpr),
                num(s.nfpr_of_means),
                num(report.missing_rate),
                num(report.mean_normalizer),
                num(s.mean_ms),
                num(s.mean_fp),
                num(s.mean_fn),
            ]
            .join(",")
        })
        .collect()
}

pub fn summary_csv(reports: &[FprReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in reports {
        for row in summary_rows(r) {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

pub const REPS_HEADER: &str =
    "design,scenario,case,r_squared,rho,tau,rep,method,status,fpr,normalized_fpr,normalizer,missing_rate,acceptance,ms,fp,fn";

pub fn reps_csv(reports: &[FprReport]) -> String {
    let mut out = String::from(REPS_HEADER);
    out.push('\n');
    for report in reports {
        let (design, scenario, case, r2, rho) = report.config.labels();
        let key = format!("{design},{scenario},{case},{r2},{rho},{}", report.config.tau);
        for r in &report.reps {
            let acc = r.acceptance.map(num).unwrap_or_default();
            for (m, o) in &r.outcomes {
                let _ = match o {
                    Ok(o) => writeln!(
                        out,
                        "{key},{},{},ok,{},{},{},{},{acc},{},{},{}",
                        r.rep,
                        m.name(),
                        num(o.fpr),
                        num(o.fpr / r.normalizer),
                        num(r.normalizer),
                        num(r.missing_rate),
                        o.ms,
                        o.fp,
                        o.fn_
                    ),
                    Err(_) => writeln!(
                        out,
                        "{key},{},{},failed,,,{},{},{acc},,,",
                        r.rep,
                        m.name(),
                        num(r.normalizer),
                        num(r.missing_rate)
                    ),
                };
            }
        }
    }
    out
}
