//! Versioned flat-text fit artifacts. Every float is written with 17
//! significant digits so a reloaded fit predicts bit-identically.

use std::collections::BTreeMap;
use std::path::Path;

use sma_core::conditional::Backend;
use sma_core::cqf::{CandidateCqf, CqfFit, CqfParams};
use sma_core::mechanism::{CandidateMechanism, MechanismFit, MechanismParams};
use sma_core::screening::NestedCandidates;
use sma_core::{QuantileLevel, Result, SimplexWeights, SmaError};

use crate::atomic_write;
use crate::csvio::fmt_f64;

pub const MAGIC: &str = "sma-fit";
pub const VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitMeta {
    pub backend: Backend,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedMechanism {
    pub meta: FitMeta,
    pub fit: MechanismFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedCqf {
    pub meta: FitMeta,
    /// Tilt of the nonresponse model the quantile fits were made under.
    pub gamma: f64,
    pub fit: CqfFit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SavedFit {
    Mechanism(SavedMechanism),
    Cqf(SavedCqf),
}

impl SavedFit {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedFit::Mechanism(_) => "mechanism",
            SavedFit::Cqf(_) => "cqf",
        }
    }
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn ints(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Kernel => "kernel",
        Backend::Sampled => "sampled",
    }
}

pub fn to_text(saved: &SavedFit) -> String {
    let mut lines: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
    put("kind", saved.kind().into());
    let meta = match saved {
        SavedFit::Mechanism(m) => m.meta,
        SavedFit::Cqf(c) => c.meta,
    };
    put("backend", backend_name(meta.backend).into());
    put("seed", meta.seed.to_string());
    match saved {
        SavedFit::Mechanism(m) => {
            let f = &m.fit;
            put("lambda_n", fmt_f64(f.lambda_n));
            put("identifiability_warning", u8::from(f.identifiability_warning).to_string());
            put("candidates", f.per_candidate.len().to_string());
            for (k, c) in f.per_candidate.iter().enumerate() {
                put(&format!("indices.{k}"), ints(&c.params.indices));
                put(&format!("phi.{k}"), floats(&c.params.phi));
                put(&format!("gamma.{k}"), fmt_f64(c.params.gamma));
                put(&format!("nll.{k}"), fmt_f64(c.nll));
                put(&format!("converged.{k}"), u8::from(c.converged).to_string());
            }
            put("weights", floats(f.weights.as_slice()));
            put("combined.indices", ints(&f.combined.indices));
            put("combined.phi", floats(&f.combined.phi));
            put("combined.gamma", fmt_f64(f.combined.gamma));
        }
        SavedFit::Cqf(c) => {
            let f = &c.fit;
            put("tau", fmt_f64(f.tau.value()));
            put("phi_n", fmt_f64(f.phi_n));
            put("gamma", fmt_f64(c.gamma));
            put("candidates", f.per_candidate.len().to_string());
            for (k, m) in f.per_candidate.iter().enumerate() {
                put(&format!("indices.{k}"), ints(&m.params.indices));
                put(&format!("beta.{k}"), floats(&m.params.beta));
                put(&format!("objective.{k}"), fmt_f64(m.objective));
                put(&format!("converged.{k}"), u8::from(m.converged).to_string());
                put(&format!("capped.{k}"), u8::from(m.capped).to_string());
            }
            put("weights", floats(f.weights.as_slice()));
        }
    }
    let mut out = format!("{MAGIC} {VERSION}\n");
    for (k, v) in lines {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str("end\n");
    out
}

struct Fields {
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn raw(&self, key: &str) -> Result<(usize, &str)> {
        self.map
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| SmaError::Parse { line: 0, msg: format!("missing field {key:?}") })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.raw(key)?;
        v.parse().map_err(|_| SmaError::Parse { line, msg: format!("{key}: cannot parse {v:?}") })
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let (line, v) = self.raw(key)?;
        v.split_whitespace()
            .map(|t| t.parse().map_err(|_| SmaError::Parse { line, msg: format!("{key}: cannot parse {t:?}") }))
            .collect()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.parse::<u8>(key)? != 0)
    }
}

pub fn from_text(text: &str) -> Result<SavedFit> {
    let mut lines = text.lines().enumerate();
    let first = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    match first.split_once(' ') {
        Some((MAGIC, VERSION)) => {}
        Some((MAGIC, v)) => return Err(SmaError::Version { found: v.into(), expected: VERSION.into() }),
        _ => return Err(SmaError::Parse { line: 1, msg: format!("not a fit artifact (expected `{MAGIC} {VERSION}`)") }),
    }
    let mut map = BTreeMap::new();
    let mut ended = false;
    for (k, raw) in lines {
        let line = k + 1;
        let l = raw.trim();
        if ended {
            if l.is_empty() {
                continue;
            }
            return Err(SmaError::Parse { line, msg: "content after `end`".into() });
        }
        if l == "end" {
            ended = true;
            continue;
        }
        let (key, v) = l
            .split_once(" = ")
            .ok_or_else(|| SmaError::Parse { line, msg: format!("expected `key = value`, found {l:?}") })?;
        if map.insert(key.to_string(), (line, v.to_string())).is_some() {
            return Err(SmaError::Parse { line, msg: format!("duplicate field {key:?}") });
        }
    }
    if !ended {
        return Err(SmaError::Parse { line: text.lines().count(), msg: "truncated artifact (no `end` line)".into() });
    }
    let f = Fields { map };
    let meta = FitMeta {
        backend: match f.raw("backend")?.1 {
            "kernel" => Backend::Kernel,
            "sampled" => Backend::Sampled,
            other => return Err(SmaError::Parse { line: f.raw("backend")?.0, msg: format!("unknown backend {other:?}") }),
        },
        seed: f.parse("seed")?,
    };
    let count: usize = f.parse("candidates")?;
    let indices = (0..count).map(|k| f.list::<usize>(&format!("indices.{k}"))).collect::<Result<Vec<_>>>()?;
    let candidates = NestedCandidates::new(indices.clone())?;
    let weights = SimplexWeights::new(f.list("weights")?)?;
    if weights.len() != count {
        return Err(SmaError::Dimension { expected: count, got: weights.len() });
    }
    match f.raw("kind")?.1 {
        "mechanism" => {
            let per_candidate = (0..count)
                .map(|k| {
                    let phi: Vec<f64> = f.list(&format!("phi.{k}"))?;
                    if phi.len() != indices[k].len() + 1 {
                        return Err(SmaError::Dimension { expected: indices[k].len() + 1, got: phi.len() });
                    }
                    Ok(CandidateMechanism {
                        params: MechanismParams { indices: indices[k].clone(), phi, gamma: f.parse(&format!("gamma.{k}"))? },
                        converged: f.flag(&format!("converged.{k}"))?,
                        nll: f.parse(&format!("nll.{k}"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let combined = MechanismParams {
                indices: f.list("combined.indices")?,
                phi: f.list("combined.phi")?,
                gamma: f.parse("combined.gamma")?,
            };
            Ok(SavedFit::Mechanism(SavedMechanism {
                meta,
                fit: MechanismFit {
                    candidates,
                    per_candidate,
                    weights,
                    combined,
                    lambda_n: f.parse("lambda_n")?,
                    identifiability_warning: f.flag("identifiability_warning")?,
                },
            }))
        }
        "cqf" => {
            let per_candidate = (0..count)
                .map(|k| {
                    let beta: Vec<f64> = f.list(&format!("beta.{k}"))?;
                    if beta.len() != indices[k].len() + 1 {
                        return Err(SmaError::Dimension { expected: indices[k].len() + 1, got: beta.len() });
                    }
                    Ok(CandidateCqf {
                        params: CqfParams { indices: indices[k].clone(), beta },
                        objective: f.parse(&format!("objective.{k}"))?,
                        converged: f.flag(&format!("converged.{k}"))?,
                        capped: f.flag(&format!("capped.{k}"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SavedFit::Cqf(SavedCqf {
                meta,
                gamma: f.parse("gamma")?,
                fit: CqfFit {
                    candidates,
                    per_candidate,
                    weights,
                    tau: QuantileLevel::new(f.parse("tau")?)?,
                    phi_n: f.parse("phi_n")?,
                },
            }))
        }
        other => Err(SmaError::Parse { line: f.raw("kind")?.0, msg: format!("unknown fit kind {other:?}") }),
    }
}

pub fn save_fit(path: &Path, saved: &SavedFit) -> Result<()> {
    atomic_write(path, to_text(saved).as_bytes())
}

pub fn load_fit(path: &Path) -> Result<SavedFit> {
    from_text(&std::fs::read_to_string(path)?)
}

pub fn load_cqf(path: &Path) -> Result<SavedCqf> {
    match load_fit(path)? {
        SavedFit::Cqf(c) => Ok(c),
        other => Err(SmaError::ArtifactKind { found: other.kind().into(), expected: "cqf".into() }),
    }
}

pub fn load_mechanism(path: &Path) -> Result<SavedMechanism> {
    match load_fit(path)? {
        SavedFit::Mechanism(m) => Ok(m),
        other => Err(SmaError::ArtifactKind { found: other.kind().into(), expected: "mechanism".into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_cqf() -> SavedCqf {
        let candidates = NestedCandidates::new(vec![vec![1], vec![1, 3]]).unwrap();
        let per_candidate = vec![
            CandidateCqf {
                params: CqfParams { indices: vec![1], beta: vec![0.1, -1.0 / 3.0] },
                objective: 0.71,
                converged: true,
                capped: false,
            },
            CandidateCqf {
                params: CqfParams { indices: vec![1, 3], beta: vec![std::f64::consts::PI, 1e-300, -2.5e17] },
                objective: 0.69,
                converged: true,
                capped: true,
            },
        ];
        SavedCqf {
            meta: FitMeta { backend: Backend::Sampled, seed: 17 },
            gamma: 0.3,
            fit: CqfFit {
                candidates,
                per_candidate,
                weights: SimplexWeights::new(vec![0.3, 0.7]).unwrap(),
                tau: QuantileLevel::new(0.05).unwrap(),
                phi_n: 4.382026634673881,
            },
        }
    }

    #[test]
    fn cqf_round_trip_is_exact() {
        let s = SavedFit::Cqf(sample_cqf());
        let back = from_text(&to_text(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncation_is_detected() {
        let text = to_text(&SavedFit::Cqf(sample_cqf()));
        for cut in [text.len() / 2, text.len() - 4] {
            let e = from_text(&text[..cut]).unwrap_err();
            assert!(matches!(e, SmaError::Parse { .. }), "{e}");
        }
    }

    #[test]
    fn version_mismatch_is_refused() {
        let text = to_text(&SavedFit::Cqf(sample_cqf())).replacen("sma-fit 1", "sma-fit 2", 1);
        assert!(matches!(from_text(&text).unwrap_err(), SmaError::Version { .. }));
    }

    #[test]
    fn kind_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.txt");
        save_fit(&path, &SavedFit::Cqf(sample_cqf())).unwrap();
        assert!(matches!(load_mechanism(&path).unwrap_err(), SmaError::ArtifactKind { .. }));
        assert!(load_cqf(&path).is_ok());
    }
}
