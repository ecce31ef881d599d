//! Sample distance correlation (V-statistic form) between a group of
//! covariates and a scalar response.

use nalgebra::DMatrix;

use crate::error::{Result, SmaError};

/// Double-centered distance matrix of a scalar response, reused across the
/// many group correlations computed during screening.
#[derive(Debug, Clone)]
pub struct DcorTarget {
    n: usize,
    centered: Vec<f64>,
    dvar: f64,
}

impl DcorTarget {
    pub fn new(b: &[f64]) -> Result<Self> {
        let n = b.len();
        if n < 2 {
            return Err(SmaError::Degenerate("distance correlation needs n >= 2".into()));
        }
        let mut dist = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                dist[k * n + l] = (b[k] - b[l]).abs();
            }
        }
        let (centered, dvar) = double_center(&dist, n);
        if !(dvar > 0.0) {
            return Err(SmaError::Degenerate("response has zero distance variance".into()));
        }
        Ok(Self { n, centered, dvar })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Distance correlation with the group whose pairwise squared Euclidean
    /// distances are `sq_dist` (row-major `n x n`).
    pub fn with_sq_distances(&self, sq_dist: &[f64]) -> Result<f64> {
        let n = self.n;
        debug_assert_eq!(sq_dist.len(), n * n);
        let dist: Vec<f64> = sq_dist.iter().map(|v| v.sqrt()).collect();
        let (a_centered, dvar_a) = double_center(&dist, n);
        if !(dvar_a > 0.0) {
            return Err(SmaError::Degenerate("covariate group has zero distance variance".into()));
        }
        let cov: f64 = a_centered
            .iter()
            .zip(&self.centered)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n * n) as f64;
        let r2 = cov / (dvar_a * self.dvar).sqrt();
        Ok(r2.clamp(0.0, 1.0).sqrt())
    }

    /// Distance correlation with the group formed by `columns` (each of length n).
    pub fn with_columns(&self, columns: &[&[f64]]) -> Result<f64> {
        if columns.is_empty() {
            return Ok(0.0);
        }
        let sq = sq_distances(columns, self.n)?;
        self.with_sq_distances(&sq)
    }
}

/// Pairwise squared Euclidean distances of the group formed by `columns`.
pub fn sq_distances(columns: &[&[f64]], n: usize) -> Result<Vec<f64>> {
    let mut sq = vec![0.0; n * n];
    for col in columns {
        if col.len() != n {
            return Err(SmaError::Dimension { expected: n, got: col.len() });
        }
        add_sq_distances(&mut sq, col);
    }
    Ok(sq)
}

pub fn add_sq_distances(sq: &mut [f64], col: &[f64]) {
    let n = col.len();
    for k in 0..n {
        let ck = col[k];
        let row = &mut sq[k * n..(k + 1) * n];
        for (l, s) in row.iter_mut().enumerate() {
            let d = ck - col[l];
            *s += d * d;
        }
    }
}

pub fn sub_sq_distances(sq: &mut [f64], col: &[f64]) {
    let n = col.len();
    for k in 0..n {
        let ck = col[k];
        let row = &mut sq[k * n..(k + 1) * n];
        for (l, s) in row.iter_mut().enumerate() {
            let d = ck - col[l];
            *s = (*s - d * d).max(0.0);
        }
    }
}

fn double_center(dist: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut row_mean = vec![0.0; n];
    for k in 0..n {
        row_mean[k] = dist[k * n..(k + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut out = vec![0.0; n * n];
    let mut ss = 0.0;
    for k in 0..n {
        for l in 0..n {
            let v = dist[k * n + l] - row_mean[k] - row_mean[l] + grand;
            out[k * n + l] = v;
            ss += v * v;
        }
    }
    let scale = grand.max(f64::MIN_POSITIVE);
    let dvar = ss / (n * n) as f64;
    // Treat round-off-sized variance of a constant input as exactly zero.
    if dvar <= 1e-24 * scale * scale {
        (out, 0.0)
    } else {
        (out, dvar)
    }
}

/// Distance correlation between the rows of `a` (`n x q`) and `b`.
pub fn distance_correlation(a: &DMatrix<f64>, b: &[f64]) -> Result<f64> {
    if a.nrows() != b.len() {
        return Err(SmaError::Dimension { expected: b.len(), got: a.nrows() });
    }
    let target = DcorTarget::new(b)?;
    let cols: Vec<Vec<f64>> = (0..a.ncols()).map(|j| a.column(j).iter().copied().collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    if refs.is_empty() {
        return Err(SmaError::Empty("distance correlation needs at least one covariate"));
    }
    target.with_columns(&refs)
}

/// Scalar convenience form.
pub fn distance_correlation_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SmaError::Dimension { expected: b.len(), got: a.len() });
    }
    DcorTarget::new(b)?.with_columns(&[a])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Textbook O(n^2) computation with explicit centered matrices.
    fn oracle(a: &[Vec<f64>], b: &[f64]) -> f64 {
        let n = b.len();
        let dist_a = |k: usize, l: usize| -> f64 {
            a[k].iter().zip(&a[l]).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
        };
        let mut am = vec![vec![0.0; n]; n];
        let mut bm = vec![vec![0.0; n]; n];
        for k in 0..n {
            for l in 0..n {
                am[k][l] = dist_a(k, l);
                bm[k][l] = (b[k] - b[l]).abs();
            }
        }
        let center = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let rows: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
            let cols: Vec<f64> = (0..n).map(|l| (0..n).map(|k| m[k][l]).sum::<f64>() / n as f64).collect();
            let g = rows.iter().sum::<f64>() / n as f64;
            (0..n)
                .map(|k| (0..n).map(|l| m[k][l] - rows[k] - cols[l] + g).collect())
                .collect()
        };
        let ac = center(&am);
        let bc = center(&bm);
        let mut vxy = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for k in 0..n {
            for l in 0..n {
                vxy += ac[k][l] * bc[k][l];
                vx += ac[k][l] * ac[k][l];
                vy += bc[k][l] * bc[k][l];
            }
        }
        (vxy / (vx * vy).sqrt()).max(0.0).sqrt()
    }

    #[test]
    fn perfect_dependence_is_one() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let v = distance_correlation_1d(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn constant_input_is_degenerate() {
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(distance_correlation_1d(&[3.0; 10], &y), Err(SmaError::Degenerate(_))));
        assert!(matches!(distance_correlation_1d(&y, &[3.0; 10]), Err(SmaError::Degenerate(_))));
    }

    #[test]
    fn agrees_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, q) in &[(5usize, 1usize), (37, 2), (120, 3), (200, 1)] {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let b: Vec<f64> = rows
                .iter()
                .map(|r| r[0].powi(2) + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let a = DMatrix::from_fn(n, q, |i, j| rows[i][j]);
            let got = distance_correlation(&a, &b).unwrap();
            let want = oracle(&rows, &b);
            assert!((got - want).abs() <= 1e-12, "n={n} q={q}: {got} vs {want}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn incremental_distances_match_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let mut sq = sq_distances(&refs, n).unwrap();
        sub_sq_distances(&mut sq, &cols[2]);
        let direct = sq_distances(&refs[..2], n).unwrap();
        for (u, v) in sq.iter().zip(&direct) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
