//! Dataset container: fully observed covariates, a partially observed
//! response and the response indicator.

use nalgebra::DMatrix;

use crate::error::{Result, SmaError};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    r: Vec<bool>,
}

impl Dataset {
    /// Builds a dataset, validating the shape and response invariants. Entries
    /// of `y` with `r = false` are ignored and stored as `NaN`.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, r: Vec<bool>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(SmaError::Empty("dataset needs at least one row and one covariate"));
        }
        if y.len() != n {
            return Err(SmaError::Dimension { expected: n, got: y.len() });
        }
        if r.len() != n {
            return Err(SmaError::Dimension { expected: n, got: r.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SmaError::Data("covariates must be finite".into()));
        }
        let mut y = y;
        for (i, (yi, &ri)) in y.iter_mut().zip(&r).enumerate() {
            if ri {
                if !yi.is_finite() {
                    return Err(SmaError::Data(format!("row {i}: observed response is not finite")));
                }
            } else {
                *yi = f64::NAN;
            }
        }
        Ok(Self { x, y, r })
    }

    /// Dataset with every response observed.
    pub fn complete(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, vec![true; n])
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r(&self) -> &[bool] {
        &self.r
    }

    pub fn x_at(&self, i: usize, j: usize) -> f64 {
        self.x[(i, j)]
    }

    pub fn respondents(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.r[i]).collect()
    }

    pub fn nonrespondents(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.r[i]).collect()
    }

    pub fn respondent_count(&self) -> usize {
        self.r.iter().filter(|&&v| v).count()
    }

    pub fn missing_count(&self) -> usize {
        self.n() - self.respondent_count()
    }

    pub fn missing_rate(&self) -> f64 {
        self.missing_count() as f64 / self.n() as f64
    }

    /// Working response `r * y` with missing entries set to zero.
    pub fn masked_response(&self) -> Vec<f64> {
        self.y
            .iter()
            .zip(&self.r)
            .map(|(&y, &r)| if r { y } else { 0.0 })
            .collect()
    }

    /// Paths that model the missingness need both respondents and nonrespondents.
    pub fn require_partial_response(&self) -> Result<()> {
        let m = self.missing_count();
        if m == 0 || m == self.n() {
            return Err(SmaError::Data(
                "missing-data estimation needs at least one respondent and one nonrespondent".into(),
            ));
        }
        Ok(())
    }

    /// Row subset, preserving order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(rows.len(), self.p(), |a, j| self.x[(rows[a], j)]);
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let r = rows.iter().map(|&i| self.r[i]).collect();
        Self::new(x, y, r)
    }

    /// Candidate design row: intercept followed by the indexed covariates.
    pub fn design_row(&self, i: usize, indices: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend(indices.iter().map(|&j| self.x[(i, j)]));
    }
}
