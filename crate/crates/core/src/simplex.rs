//! Points on the probability simplex.

use crate::error::{Result, SmaError};

const SUM_TOL: f64 = 1e-10;

/// Model-averaging weights: nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(SmaError::Empty("weights need at least one component"));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SmaError::Data(format!("weights must be finite and nonnegative: {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(SmaError::Data(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(s: usize) -> Self {
        Self(vec![1.0 / s as f64; s])
    }

    pub fn vertex(s: usize, k: usize) -> Self {
        let mut w = vec![0.0; s];
        w[k] = 1.0;
        Self(w)
    }

    /// Clips negatives and rescales; used on optimizer output that is on the
    /// simplex up to round-off.
    pub fn renormalized(w: &[f64]) -> Result<Self> {
        let clipped: Vec<f64> = w.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect();
        let total: f64 = clipped.iter().sum();
        if !(total > 0.0) {
            return Err(SmaError::Numerical("weights vanished during renormalization".into()));
        }
        Self::new(clipped.into_iter().map(|v| v / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = k;
            }
        }
        best
    }

    /// `sum_k w_k * sizes_k`.
    pub fn weighted_size(&self, sizes: &[usize]) -> f64 {
        self.0.iter().zip(sizes).map(|(w, &s)| w * s as f64).sum()
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(SmaError::Empty("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SmaError::Data("projection input must be finite".into()));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    }
    SimplexWeights::new(w)
}
