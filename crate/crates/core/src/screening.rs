//! Candidate construction: marginal distance-correlation screening on the
//! working response `r * y`, nested candidate sets, grouped variable
//! importance and the post-selection refinements built on it.

use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::dcor::{add_sq_distances, sq_distances, sub_sq_distances, DcorTarget};
use crate::error::{Result, SmaError};

/// Covariates ranked by decreasing marginal distance correlation with `r * y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    pub ordered_indices: Vec<usize>,
    pub dc_values: Vec<f64>,
}

impl ScreeningResult {
    pub fn d_n(&self) -> usize {
        self.ordered_indices.len()
    }
}

/// Nested index sets `M_1 ⊂ ... ⊂ M_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedCandidates {
    pub index_sets: Vec<Vec<usize>>,
}

impl NestedCandidates {
    /// Validates strict nesting.
    pub fn new(index_sets: Vec<Vec<usize>>) -> Result<Self> {
        if index_sets.is_empty() || index_sets.iter().any(|s| s.is_empty()) {
            return Err(SmaError::Empty("nested candidates need nonempty index sets"));
        }
        for w in index_sets.windows(2) {
            let small: BTreeSet<_> = w[0].iter().collect();
            let large: BTreeSet<_> = w[1].iter().collect();
            if large.len() != w[1].len() || small.len() != w[0].len() {
                return Err(SmaError::Config("candidate index sets contain duplicates".into()));
            }
            if !(small.is_subset(&large) && large.len() > small.len()) {
                return Err(SmaError::Config("candidate index sets are not strictly nested".into()));
            }
        }
        Ok(Self { index_sets })
    }

    pub fn len(&self) -> usize {
        self.index_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_sets.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.index_sets.iter().map(|s| s.len()).collect()
    }

    pub fn largest(&self) -> &[usize] {
        self.index_sets.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Retained count `floor(2n / (3 ln n))`.
pub fn screening_size(n: usize) -> usize {
    let nf = n as f64;
    (2.0 * nf / (3.0 * nf.ln())).floor() as usize
}

fn column(data: &Dataset, j: usize) -> Vec<f64> {
    data.x().column(j).iter().copied().collect()
}

/// Marginal distance correlation of every covariate with `r * y`; columns
/// without spread score zero.
pub fn marginal_dcor(data: &Dataset) -> Result<Vec<f64>> {
    let target = DcorTarget::new(&data.masked_response())?;
    let mut out = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let col = column(data, j);
        out.push(match target.with_columns(&[&col]) {
            Ok(v) => v,
            Err(SmaError::Degenerate(_)) => 0.0,
            Err(e) => return Err(e),
        });
    }
    Ok(out)
}

fn rank_by(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// DC-SIS with the default retained count.
pub fn dcsis_screen(data: &Dataset) -> Result<ScreeningResult> {
    dcsis_screen_top(data, screening_size(data.n()))
}

pub fn dcsis_screen_top(data: &Dataset, d_n: usize) -> Result<ScreeningResult> {
    if data.n() < 10 {
        return Err(SmaError::Config(format!("screening needs n >= 10, got {}", data.n())));
    }
    if d_n < 1 {
        return Err(SmaError::Config("screening would retain no covariates".into()));
    }
    let v = marginal_dcor(data)?;
    let keep = d_n.min(data.p());
    let ordered_indices: Vec<usize> = rank_by(&v).into_iter().take(keep).collect();
    let dc_values = ordered_indices.iter().map(|&j| v[j]).collect();
    Ok(ScreeningResult { ordered_indices, dc_values })
}

/// Nested sets of sizes 2, 4, ... with a final all-inclusive set.
pub fn build_nested(ordered: &[usize]) -> Result<NestedCandidates> {
    let d = ordered.len();
    if d == 0 {
        return Err(SmaError::Empty("no screened covariates to nest"));
    }
    if d == 1 {
        return NestedCandidates::new(vec![ordered.to_vec()]);
    }
    let count = d.div_ceil(2);
    let sets = (1..=count)
        .map(|m| ordered[..if m < count { 2 * m } else { d }].to_vec())
        .collect();
    NestedCandidates::new(sets)
}

/// Group distance correlations against a fixed working response.
pub struct GroupDcor<'a> {
    data: &'a Dataset,
    target: DcorTarget,
    columns: Vec<Option<Vec<f64>>>,
}

impl<'a> GroupDcor<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        Ok(Self {
            data,
            target: DcorTarget::new(&data.masked_response())?,
            columns: vec![None; data.p()],
        })
    }

    fn col(&mut self, j: usize) -> &[f64] {
        if self.columns[j].is_none() {
            self.columns[j] = Some(column(self.data, j));
        }
        self.columns[j].as_deref().unwrap()
    }

    /// `D(indices)`, with `D(empty) = 0`.
    pub fn dc(&mut self, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Ok(0.0);
        }
        let n = self.target.n();
        let mut sq = vec![0.0; n * n];
        for &j in indices {
            let c = self.col(j).to_vec();
            add_sq_distances(&mut sq, &c);
        }
        self.target.with_sq_distances(&sq)
    }

    fn sq_of(&mut self, indices: &[usize]) -> Result<Vec<f64>> {
        let n = self.target.n();
        let cols: Vec<Vec<f64>> = indices.iter().map(|&j| self.col(j).to_vec()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        sq_distances(&refs, n)
    }
}

/// `D(large) - D(small)` for `small ⊂ large`.
pub fn gvi(small: &[usize], large: &[usize], data: &Dataset) -> Result<f64> {
    let s: BTreeSet<_> = small.iter().collect();
    let l: BTreeSet<_> = large.iter().collect();
    if !s.is_subset(&l) {
        return Err(SmaError::Config("gvi needs the small group inside the large group".into()));
    }
    let mut g = GroupDcor::new(data)?;
    Ok(g.dc(large)? - g.dc(small)?)
}

/// Threshold applied to the adjacent increments `GVI(t) = dc_t - dc_(t-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GviThreshold {
    /// Default `Fixed(0.0)`: keep a covariate whenever it does not lower the
    /// group correlation.
    Fixed(f64),
    /// Smallest increment `D_m - D_(m-1)` along the nested candidate
    /// sequence built from the screened order (`D_0 = 0`).
    MinNested,
}

impl Default for GviThreshold {
    fn default() -> Self {
        GviThreshold::Fixed(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostSelection {
    /// Selected covariates in decreasing marginal distance correlation.
    pub indices: Vec<usize>,
    /// Screened set the selection was drawn from.
    pub screened: ScreeningResult,
    /// `(index, dc_t, GVI(t))` along the screened order.
    pub trace: Vec<(usize, f64, f64)>,
    pub threshold: f64,
    /// Set when the greedy loop stopped at its iteration cap.
    pub capped: bool,
}

fn resolve_threshold(g: &mut GroupDcor, screened: &[usize], threshold: GviThreshold) -> Result<f64> {
    match threshold {
        GviThreshold::Fixed(v) => Ok(v),
        GviThreshold::MinNested => {
            let nested = build_nested(screened)?;
            let mut prev = 0.0;
            let mut best = f64::INFINITY;
            for set in &nested.index_sets {
                let d = g.dc(set)?;
                best = best.min(d - prev);
                prev = d;
            }
            Ok(best)
        }
    }
}

/// Post-selection by thresholding adjacent group-importance increments.
pub fn ps_algorithm(data: &Dataset, d_n: usize, threshold: GviThreshold) -> Result<PostSelection> {
    if d_n < 2 {
        return Err(SmaError::Config("post-selection needs d_n >= 2".into()));
    }
    if let GviThreshold::Fixed(v) = threshold {
        if v.is_nan() {
            return Err(SmaError::Config("GVI threshold is NaN".into()));
        }
    }
    let screened = dcsis_screen_top(data, d_n)?;
    let order = screened.ordered_indices.clone();
    let mut g = GroupDcor::new(data)?;
    let s_n = resolve_threshold(&mut g, &order, threshold)?;

    let n = data.n();
    let mut sq = vec![0.0; n * n];
    let mut prev = 0.0;
    let mut trace = Vec::with_capacity(order.len());
    let mut selected = vec![order[0]];
    for (t, &j) in order.iter().enumerate() {
        let c = g.col(j).to_vec();
        add_sq_distances(&mut sq, &c);
        let dc_t = if t == 0 { screened.dc_values[0] } else { g.target.with_sq_distances(&sq)? };
        let inc = dc_t - prev;
        trace.push((j, dc_t, inc));
        if t > 0 && inc >= s_n {
            selected.push(j);
        }
        prev = dc_t;
    }
    Ok(PostSelection { indices: selected, screened, trace, threshold: s_n, capped: false })
}

/// Greedy post-selection: forward additions from the screened pool while the
/// group correlation increases, otherwise eliminations of members whose
/// removal does not decrease it, until a full pass changes nothing.
pub fn gps_algorithm(data: &Dataset, d_n: usize, threshold: GviThreshold) -> Result<PostSelection> {
    let ps = ps_algorithm(data, d_n, threshold)?;
    let pool = ps.screened.ordered_indices.clone();
    let marginal: Vec<f64> = ps.screened.dc_values.clone();
    let mut g = GroupDcor::new(data)?;
    let (active, capped) = greedy_refine(&mut g, &pool, ps.indices.clone(), 10 * d_n)?;
    if capped {
        log::warn!("greedy post-selection hit its iteration cap; returning the current set");
    }
    let mut ranked: Vec<(usize, f64)> = active
        .iter()
        .map(|&j| {
            let pos = pool.iter().position(|&k| k == j).unwrap();
            (j, marginal[pos])
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PostSelection { indices: ranked.into_iter().map(|(j, _)| j).collect(), capped, ..ps })
}

fn greedy_refine(
    g: &mut GroupDcor,
    pool: &[usize],
    mut active: Vec<usize>,
    max_outer: usize,
) -> Result<(Vec<usize>, bool)> {
    for _ in 0..max_outer {
        let before = active.clone();
        let mut sq = g.sq_of(&active)?;
        let base = g.target.with_sq_distances(&sq)?;
        // F-step
        let mut best: Option<(usize, f64)> = None;
        for &k in pool.iter().filter(|k| !active.contains(k)) {
            let c = g.col(k).to_vec();
            add_sq_distances(&mut sq, &c);
            let gain = g.target.with_sq_distances(&sq)? - base;
            sub_sq_distances(&mut sq, &c);
            if best.map_or(true, |(_, b)| gain > b) {
                best = Some((k, gain));
            }
        }
        match best {
            Some((k, gain)) if gain > 0.0 => active.push(k),
            _ => elimination_step(g, &mut active)?,
        }
        if same_members(&before, &active) {
            return Ok((active, false));
        }
    }
    Ok((active, true))
}

/// E-step: repeatedly drop the member with the smallest leave-one-out
/// importance while that importance is nonpositive.
pub fn elimination_step(g: &mut GroupDcor, active: &mut Vec<usize>) -> Result<()> {
    while active.len() > 1 {
        let mut sq = g.sq_of(active)?;
        let full = g.target.with_sq_distances(&sq)?;
        let mut worst: Option<(usize, f64)> = None;
        for (pos, &k) in active.iter().enumerate() {
            let c = g.col(k).to_vec();
            sub_sq_distances(&mut sq, &c);
            let imp = full - g.target.with_sq_distances(&sq)?;
            add_sq_distances(&mut sq, &c);
            if worst.map_or(true, |(_, w)| imp < w) {
                worst = Some((pos, imp));
            }
        }
        match worst {
            Some((pos, imp)) if imp <= 0.0 => {
                active.remove(pos);
            }
            _ => break,
        }
    }
    Ok(())
}

fn same_members(a: &[usize], b: &[usize]) -> bool {
    let x: BTreeSet<_> = a.iter().collect();
    let y: BTreeSet<_> = b.iter().collect();
    x == y
}
