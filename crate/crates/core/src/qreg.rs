//! Exact minimization of weighted check-loss objectives
//!
//! ```text
//! F(b) = sum_k c_k * rho_{tau_k}(y_k - x_k' b) + g' b
//! ```
//!
//! Every estimating step that is linear in its parameters reduces to this
//! form: candidate quantile fits under nonresponse (pseudo-observations carry
//! the tilted conditional draws), IPW refits, and the averaging-weight
//! problems (exact-penalty rows encode the simplex).
//!
//! The solver runs a majorize-minimize pass on a smoothed loss to get close to
//! the optimum, snaps to a vertex (p rows interpolated exactly) and then walks
//! improving edges of the piecewise-linear objective until none remains, which
//! is the LP optimality condition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmaError};
use crate::loss::check_loss_raw;

/// A weighted check-loss problem with rows stored row-major.
#[derive(Debug, Clone, Default)]
pub struct CheckLossProblem {
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    c: Vec<f64>,
    tau: Vec<f64>,
    linear: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CheckLossSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub pivots: usize,
}

const MM_ITERS: usize = 60;
const REFRESH_EVERY: usize = 25;

impl CheckLossProblem {
    pub fn new(p: usize) -> Self {
        Self { p, linear: vec![0.0; p], ..Default::default() }
    }

    pub fn with_capacity(p: usize, rows: usize) -> Self {
        Self {
            p,
            x: Vec::with_capacity(rows * p),
            y: Vec::with_capacity(rows),
            c: Vec::with_capacity(rows),
            tau: Vec::with_capacity(rows),
            linear: vec![0.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    /// Adds `c * rho_tau(y - x' b)`; rows with zero weight are dropped.
    pub fn push(&mut self, x: &[f64], y: f64, c: f64, tau: f64) {
        debug_assert_eq!(x.len(), self.p);
        if c <= 0.0 {
            return;
        }
        self.x.extend_from_slice(x);
        self.y.push(y);
        self.c.push(c);
        self.tau.push(tau);
    }

    pub fn set_linear(&mut self, g: Vec<f64>) {
        debug_assert_eq!(g.len(), self.p);
        self.linear = g;
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn residual(&self, i: usize, beta: &[f64]) -> f64 {
        self.y[i] - dot(self.row(i), beta)
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        let mut total = dot(&self.linear, beta);
        for i in 0..self.rows() {
            total += self.c[i] * check_loss_raw(self.residual(i, beta), self.tau[i]);
        }
        total
    }

    /// Minimizes the objective; `start` seeds the smoothing pass.
    pub fn solve(&self, start: Option<&[f64]>) -> Result<CheckLossSolution> {
        let p = self.p;
        if p == 0 {
            return Err(SmaError::Empty("check-loss problem has no parameters"));
        }
        if self.rows() < p {
            return Err(SmaError::Degenerate(format!(
                "check-loss problem has {} rows for {} parameters",
                self.rows(),
                p
            )));
        }
        let warm = self.majorize_minimize(start)?;
        let Some(basis) = self.initial_basis(&warm) else {
            let objective = self.objective(&warm);
            return Ok(CheckLossSolution { beta: warm, objective, converged: false, pivots: 0 });
        };
        // Edge tests cannot certify a degenerate vertex (more than p rows
        // through it), which nested fits and simplex rows produce routinely.
        // Pivot on slightly shaken responses first, then finish exactly.
        let basis = match self.perturbed().pivot(basis.clone()) {
            Ok((_, b)) => b,
            Err(SmaError::Numerical(_)) => basis,
            Err(e) => return Err(e),
        };
        match self.pivot(basis) {
            Ok((sol, _)) => {
                let warm_obj = self.objective(&warm);
                if sol.objective <= warm_obj + 1e-12 * warm_obj.abs().max(1.0) {
                    Ok(sol)
                } else {
                    Ok(CheckLossSolution { beta: warm, objective: warm_obj, converged: false, pivots: sol.pivots })
                }
            }
            Err(SmaError::Numerical(_)) => {
                let objective = self.objective(&warm);
                Ok(CheckLossSolution { beta: warm, objective, converged: false, pivots: 0 })
            }
            Err(e) => Err(e),
        }
    }

    fn perturbed(&self) -> Self {
        let scale = 1e-9 * (1.0 + self.y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut out = self.clone();
        for (i, y) in out.y.iter_mut().enumerate() {
            let h = (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 11;
            *y += scale * (2.0 * h as f64 / (1u64 << 53) as f64 - 1.0);
        }
        out
    }

    /// MM iterations on `rho = |u|/2 + (tau - 1/2) u` with `|u|` majorized by a
    /// quadratic floored at `delta`.
    fn majorize_minimize(&self, start: Option<&[f64]>) -> Result<Vec<f64>> {
        let p = self.p;
        let n = self.rows();
        let mut scale = 0.0;
        for &v in &self.y {
            scale += v.abs();
        }
        let scale = (scale / n as f64).max(1e-8);
        let mut beta = match start {
            Some(b) if b.len() == p => b.to_vec(),
            _ => vec![0.0; p],
        };
        let mut delta = scale;
        let delta_floor = 1e-6 * scale;
        let mut prev = self.objective(&beta);
        for _ in 0..MM_ITERS {
            let mut a = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            for i in 0..n {
                let xi = self.row(i);
                let u = self.residual(i, &beta);
                let v = self.c[i] / (2.0 * u.abs().max(delta));
                let lin = (self.tau[i] - 0.5) * self.c[i];
                for r in 0..p {
                    let vr = v * xi[r];
                    rhs[r] += vr * self.y[i] + lin * xi[r];
                    for s in r..p {
                        a[(r, s)] += vr * xi[s];
                    }
                }
            }
            for r in 0..p {
                rhs[r] -= self.linear[r];
                for s in 0..r {
                    a[(r, s)] = a[(s, r)];
                }
            }
            let ridge = 1e-10 * (0..p).map(|r| a[(r, r)]).fold(0.0, f64::max).max(1e-300);
            for r in 0..p {
                a[(r, r)] += ridge;
            }
            let Some(chol) = a.cholesky() else {
                break;
            };
            let next: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
            if next.iter().any(|v| !v.is_finite()) {
                break;
            }
            let obj = self.objective(&next);
            beta = next;
            let rel = (prev - obj).abs() / prev.abs().max(1e-12);
            prev = obj;
            if rel < 1e-10 {
                if delta <= delta_floor {
                    break;
                }
                delta = (delta * 0.1).max(delta_floor);
            } else {
                delta = (delta * 0.5).max(delta_floor);
            }
        }
        Ok(beta)
    }

    /// Picks p linearly independent rows with the smallest residuals.
    fn initial_basis(&self, beta: &[f64]) -> Option<Vec<usize>> {
        let p = self.p;
        let mut order: Vec<usize> = (0..self.rows()).collect();
        let res: Vec<f64> = order.iter().map(|&i| self.residual(i, beta).abs()).collect();
        order.sort_by(|&a, &b| res[a].total_cmp(&res[b]).then(a.cmp(&b)));
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut basis = Vec::with_capacity(p);
        for &i in &order {
            let xi = self.row(i);
            let norm0 = dot(xi, xi).sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut v: Vec<f64> = xi.to_vec();
            for qk in &q {
                let proj = dot(&v, qk);
                v.iter_mut().zip(qk).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 * norm0 {
                v.iter_mut().for_each(|a| *a /= norm);
                q.push(v);
                basis.push(i);
                if basis.len() == p {
                    return Some(basis);
                }
            }
        }
        None
    }

    fn basis_inverse(&self, basis: &[usize]) -> Option<DMatrix<f64>> {
        let p = self.p;
        let xb = DMatrix::from_fn(p, p, |r, s| self.x[basis[r] * p + s]);
        xb.try_inverse()
    }

    fn pivot(&self, mut basis: Vec<usize>) -> Result<(CheckLossSolution, Vec<usize>)> {
        let p = self.p;
        let n = self.rows();
        let max_pivots = 50 * (n + p);
        let mut in_basis = vec![usize::MAX; n];
        for (k, &i) in basis.iter().enumerate() {
            in_basis[i] = k;
        }
        let mut binv = self
            .basis_inverse(&basis)
            .ok_or_else(|| SmaError::Numerical("singular starting basis".into()))?;
        let mut z = vec![0.0; n * p];
        let mut beta = vec![0.0; p];
        let mut since_refresh = 0usize;
        let mut pivots = 0usize;
        let mut stalled = 0usize;

        let refresh = |binv: &DMatrix<f64>, z: &mut [f64], beta: &mut [f64], basis: &[usize]| {
            for (i, zi) in z.chunks_mut(p).enumerate() {
                let xi = self.row(i);
                for k in 0..p {
                    let mut s = 0.0;
                    for r in 0..p {
                        s += xi[r] * binv[(r, k)];
                    }
                    zi[k] = s;
                }
            }
            for k in 0..p {
                let mut s = 0.0;
                for (r, &bi) in basis.iter().enumerate() {
                    s += binv[(k, r)] * self.y[bi];
                }
                beta[k] = s;
            }
        };
        refresh(&binv, &mut z, &mut beta, &basis);

        let mut resid = vec![0.0; n];
        let mut breaks: Vec<(f64, usize)> = Vec::new();
        loop {
            for i in 0..n {
                resid[i] = if in_basis[i] != usize::MAX { 0.0 } else { self.residual(i, &beta) };
            }
            let res_tol = 1e-12 * (1.0 + self.y.iter().fold(0.0f64, |m, v| m.max(v.abs())));

            // h_k = derivative along +Binv e_k from rows with nonzero residual;
            // zero-residual rows contribute one-sided slopes per direction.
            let mut h = vec![0.0; p];
            let mut mass = vec![0.0; p];
            let mut zero_rows: Vec<usize> = Vec::new();
            for i in 0..n {
                let zi = &z[i * p..(i + 1) * p];
                let ci = self.c[i];
                if resid[i].abs() <= res_tol {
                    zero_rows.push(i);
                    for k in 0..p {
                        mass[k] += ci * zi[k].abs();
                    }
                    continue;
                }
                let psi = if resid[i] > 0.0 { self.tau[i] } else { self.tau[i] - 1.0 };
                for k in 0..p {
                    h[k] -= ci * psi * zi[k];
                    mass[k] += ci * zi[k].abs();
                }
            }
            let mut best: Option<(usize, f64, f64)> = None;
            for k in 0..p {
                let lin: f64 = (0..p).map(|r| self.linear[r] * binv[(r, k)]).sum();
                for &s in &[1.0, -1.0] {
                    let mut d = s * (h[k] + lin);
                    for &i in &zero_rows {
                        d += self.c[i] * check_loss_raw(-s * z[i * p + k], self.tau[i]);
                    }
                    let tol = 1e-11 * (mass[k] + lin.abs()).max(1e-300);
                    if d < -tol && best.map_or(true, |(_, _, bd)| d < bd) {
                        best = Some((k, s, d));
                    }
                }
            }
            let Some((k, s, slope0)) = best else {
                let objective = self.objective(&beta);
                return Ok((CheckLossSolution { beta, objective, converged: true, pivots }, basis));
            };
            if pivots >= max_pivots || stalled > 4 * p + 20 {
                let objective = self.objective(&beta);
                return Ok((CheckLossSolution { beta, objective, converged: false, pivots }, basis));
            }

            breaks.clear();
            for i in 0..n {
                if in_basis[i] != usize::MAX || resid[i].abs() <= res_tol {
                    continue;
                }
                let g = s * z[i * p + k];
                if g == 0.0 {
                    continue;
                }
                let t = resid[i] / g;
                if t > 0.0 {
                    breaks.push((t, i));
                }
            }
            breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut slope = slope0;
            let mut step = None;
            for &(t, i) in &breaks {
                slope += self.c[i] * (s * z[i * p + k]).abs();
                if slope >= 0.0 {
                    step = Some((t, i));
                    break;
                }
            }
            let Some((t, entering)) = step else {
                return Err(SmaError::Numerical("check-loss objective is unbounded below".into()));
            };
            if t <= 1e-14 {
                stalled += 1;
            } else {
                stalled = 0;
            }

            // Basis exchange: position k leaves, `entering` joins.
            let leaving = basis[k];
            let zik = z[entering * p + k];
            if zik.abs() < 1e-14 {
                return Err(SmaError::Numerical("pivot element vanished".into()));
            }
            let mut zrow: Vec<f64> = z[entering * p..(entering + 1) * p].to_vec();
            zrow[k] -= 1.0;
            let dk: Vec<f64> = (0..p).map(|r| binv[(r, k)]).collect();
            for r in 0..p {
                for c2 in 0..p {
                    binv[(r, c2)] -= dk[r] * zrow[c2] / zik;
                }
            }
            for (i, zi) in z.chunks_mut(p).enumerate() {
                let f = zi[k] / zik;
                if f != 0.0 {
                    for c2 in 0..p {
                        zi[c2] -= f * zrow[c2];
                    }
                }
                let _ = i;
            }
            for r in 0..p {
                beta[r] += t * s * dk[r];
            }
            basis[k] = entering;
            in_basis[leaving] = usize::MAX;
            in_basis[entering] = k;
            pivots += 1;
            since_refresh += 1;
            if since_refresh >= REFRESH_EVERY {
                since_refresh = 0;
                binv = self
                    .basis_inverse(&basis)
                    .ok_or_else(|| SmaError::Numerical("basis became singular".into()))?;
                refresh(&binv, &mut z, &mut beta, &basis);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Minimizes `sum_k c_k rho_tau(y_k - m_k' w) + pen' w` over the probability
/// simplex. Constraints enter as exact-penalty rows: hinges `K max(-w_j, 0)`
/// and `K |1 - sum_j w_j|` with `K` above the objective's Lipschitz bound.
pub fn minimize_on_simplex(
    mut problem: CheckLossProblem,
    penalty: &[f64],
    start: Option<&[f64]>,
) -> Result<(Vec<f64>, bool)> {
    let s = problem.dim();
    if s == 1 {
        return Ok((vec![1.0], true));
    }
    let mut lip = penalty.iter().fold(0.0f64, |m, v| m.max(v.abs())) * s as f64;
    for i in 0..problem.rows() {
        let row_max = problem.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        lip += problem.c[i] * row_max * s as f64;
    }
    let big = 10.0 * lip + 1.0;
    let mut e = vec![0.0; s];
    for j in 0..s {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        problem.push(&e, 0.0, big, 1.0);
    }
    problem.push(&vec![1.0; s], 1.0, 2.0 * big, 0.5);
    problem.set_linear(penalty.to_vec());
    let uniform = vec![1.0 / s as f64; s];
    let sol = problem.solve(Some(start.unwrap_or(&uniform)))?;
    let w: Vec<f64> = sol.beta.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(SmaError::Numerical("simplex solve returned no mass".into()));
    }
    Ok((w.into_iter().map(|v| v / total).collect(), sol.converged))
}
