//! Sliced inverse regression on respondents, used to reduce the screened
//! covariates to a low-dimensional conditioning variable.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::Dataset;
use crate::error::{Result, SmaError};

/// Orthonormal directions over a subset of covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionBasis {
    pub indices: Vec<usize>,
    /// `indices.len() x d`, orthonormal columns.
    pub directions: DMatrix<f64>,
    /// Leading eigenvalues of the standardized slice-mean covariance.
    pub eigenvalues: Vec<f64>,
}

impl ReductionBasis {
    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    /// Reduced predictor `B' x_i[indices]` for every unit.
    pub fn project(&self, data: &Dataset) -> Vec<Vec<f64>> {
        (0..data.n())
            .map(|i| {
                (0..self.dim())
                    .map(|c| {
                        self.indices
                            .iter()
                            .enumerate()
                            .map(|(k, &j)| self.directions[(k, c)] * data.x_at(i, j))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Identity basis: each covariate is its own direction.
    pub fn identity(indices: &[usize]) -> Self {
        let q = indices.len();
        Self { indices: indices.to_vec(), directions: DMatrix::identity(q, q), eigenvalues: vec![1.0; q] }
    }
}

/// Default number of SIR directions. Selection on `y` adds the mechanism
/// index to the respondents' conditional law, so one direction is too few.
pub const DEFAULT_SIR_DIM: usize = 2;

pub fn default_slices(respondents: usize) -> usize {
    ((respondents as f64).sqrt().ceil() as usize).max(5)
}

/// SIR with `d` directions and `slices` slices. The slice count is lowered
/// when respondents are too few for five per slice.
pub fn sir_basis(data: &Dataset, indices: &[usize], d: usize, slices: usize) -> Result<ReductionBasis> {
    let q = indices.len();
    if q == 0 {
        return Err(SmaError::Empty("SIR needs at least one covariate"));
    }
    if d == 0 || d > q {
        return Err(SmaError::Config(format!("SIR dimension {d} must lie in 1..={q}")));
    }
    let resp = data.respondents();
    let nr = resp.len();
    let mut h = slices;
    if nr < 5 * h {
        h = nr / 5;
        log::warn!("SIR slice count lowered from {slices} to {h}");
    }
    if h < d + 1 {
        return Err(SmaError::Config(format!(
            "SIR needs at least {} slices of five respondents, only {nr} respondents",
            d + 1
        )));
    }

    let x = DMatrix::from_fn(nr, q, |a, k| data.x_at(resp[a], indices[k]));
    let mean = DVector::from_fn(q, |k, _| x.column(k).mean());
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / nr as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(SmaError::Degenerate("covariates have no spread among respondents".into()));
    }
    // Pseudo-inverse square root; near-null directions are dropped.
    let mut inv_sqrt = DMatrix::zeros(q, q);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-10 * top {
            let v = eig.eigenvectors.column(k);
            inv_sqrt += v * v.transpose() / lam.sqrt();
        }
    }
    let z = centered * &inv_sqrt;

    let y: Vec<f64> = resp.iter().map(|&i| data.y()[i]).collect();
    let mut order: Vec<usize> = (0..nr).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut m = DMatrix::zeros(q, q);
    for s in 0..h {
        let lo = s * nr / h;
        let hi = (s + 1) * nr / h;
        let mut sm = DVector::zeros(q);
        for &a in &order[lo..hi] {
            sm += z.row(a).transpose();
        }
        let cnt = (hi - lo) as f64;
        sm /= cnt;
        m += &sm * sm.transpose() * (cnt / nr as f64);
    }

    let me = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|&a, &b| me.eigenvalues[b].total_cmp(&me.eigenvalues[a]));
    let positive = idx.iter().filter(|&&k| me.eigenvalues[k] > 1e-12).count();
    let d_eff = if positive < d {
        log::warn!("SIR kernel matrix has rank {positive}; using {} directions", positive.max(1));
        positive.max(1)
    } else {
        d
    };

    let mut dirs = DMatrix::zeros(q, d_eff);
    let mut eigenvalues = Vec::with_capacity(d_eff);
    for (c, &k) in idx.iter().take(d_eff).enumerate() {
        let b = &inv_sqrt * me.eigenvectors.column(k);
        dirs.set_column(c, &b);
        eigenvalues.push(me.eigenvalues[k].max(0.0));
    }
    let directions = orthonormalize(dirs)?;
    Ok(ReductionBasis { indices: indices.to_vec(), directions, eigenvalues })
}

/// Gram-Schmidt with a sign convention: the largest-magnitude entry of each
/// column is positive.
fn orthonormalize(mut a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    for c in 0..a.ncols() {
        for prev in 0..c {
            let proj = a.column(prev).dot(&a.column(c));
            let pc = a.column(prev).clone_owned();
            let mut col = a.column_mut(c);
            col.axpy(-proj, &pc, 1.0);
        }
        let norm = a.column(c).norm();
        if norm < 1e-12 {
            return Err(SmaError::Numerical("SIR directions are linearly dependent".into()));
        }
        let mut col = a.column_mut(c);
        col /= norm;
        let lead = col.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(a)
}
