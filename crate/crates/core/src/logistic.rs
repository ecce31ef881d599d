//! Logistic regression for the nonresponse model, written in the
//! parameterization `P(r = 1) = 1 / (1 + exp(eta))`, `eta = x'phi + offset`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmaError};

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood `n^-1 sum [(r - 1) eta + log(1 + e^eta)]`.
pub fn mean_nll(eta: &[f64], r: &[bool]) -> f64 {
    let s: f64 = eta.iter().zip(r).map(|(e, &ri)| if ri { softplus(*e) } else { softplus(*e) - e }).sum();
    s / eta.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub nll: f64,
    pub converged: bool,
}

fn linear_predictor(x: &DMatrix<f64>, coef: &[f64], offset: &[f64]) -> Vec<f64> {
    let c = DVector::from_column_slice(coef);
    let lin = x * c;
    lin.iter().zip(offset).map(|(a, b)| a + b).collect()
}

/// Damped Newton with step halving. Rows of `x` are design rows (intercept
/// included by the caller). `ridge` adds `ridge/2 |coef|^2` per observation
/// to the mean objective.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    r: &[bool],
    offset: &[f64],
    start: Option<&[f64]>,
    ridge: f64,
    max_iter: usize,
) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if r.len() != n || offset.len() != n {
        return Err(SmaError::Dimension { expected: n, got: r.len().min(offset.len()) });
    }
    let mut coef = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let objective = |c: &[f64]| {
        let eta = linear_predictor(x, c, offset);
        mean_nll(&eta, r) + 0.5 * ridge * c.iter().map(|v| v * v).sum::<f64>()
    };
    let mut f = objective(&coef);
    let mut converged = false;
    for _ in 0..max_iter {
        let eta = linear_predictor(x, &coef, offset);
        let mut grad = DVector::from_fn(p, |j, _| ridge * coef[j]);
        let mut hess = DMatrix::from_diagonal_element(p, p, ridge);
        for i in 0..n {
            let s = sigmoid(eta[i]);
            let g = (if r[i] { 0.0 } else { -1.0 }) + s;
            let w = s * (1.0 - s);
            let row = x.row(i);
            for a in 0..p {
                grad[a] += g * row[a] / n as f64;
                for b in a..p {
                    hess[(a, b)] += w * row[a] * row[b] / n as f64;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        if grad.amax() < 1e-10 {
            converged = true;
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let bump = 1e-8 * (1.0 + hess.diagonal().amax());
                match (hess + DMatrix::from_diagonal_element(p, p, bump)).cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        // Below roundoff in the objective the Newton step is taken undamped.
        if grad.dot(&step) < 1e-13 * (1.0 + f.abs()) {
            coef.iter_mut().zip(step.iter()).for_each(|(c, s)| *c -= s);
            f = objective(&coef);
            continue;
        }
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c - t * s).collect();
            let fc = objective(&cand);
            if fc <= f + 1e-4 * t * -grad.dot(&step) {
                coef = cand;
                f = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            converged = grad.amax() < 1e-7;
            break;
        }
    }
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(SmaError::Numerical("logistic coefficients diverged".into()));
    }
    let nll = mean_nll(&linear_predictor(x, &coef, offset), r);
    Ok(LogisticFit { coef, nll, converged })
}

/// L1-penalized logistic fit (intercept in column 0, unpenalized) by proximal
/// Newton: a weighted least-squares approximation solved by coordinate descent.
pub fn fit_logistic_l1(x: &DMatrix<f64>, r: &[bool], lambda: f64, start: Option<&[f64]>) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    let zero = vec![0.0; n];
    let mut coef = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let objective = |c: &[f64]| {
        mean_nll(&linear_predictor(x, c, &zero), r) + lambda * c[1..].iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut f = objective(&coef);
    let mut converged = false;
    for _ in 0..100 {
        let eta = linear_predictor(x, &coef, &zero);
        let w: Vec<f64> = eta.iter().map(|e| (sigmoid(*e) * (1.0 - sigmoid(*e))).max(1e-5)).collect();
        // working response for the quadratic model of the NLL around eta
        let z: Vec<f64> = (0..n)
            .map(|i| eta[i] - ((if r[i] { 0.0 } else { -1.0 }) + sigmoid(eta[i])) / w[i])
            .collect();
        let mut b = coef.clone();
        let mut fit: Vec<f64> = eta.clone();
        for _ in 0..200 {
            let mut delta = 0.0f64;
            for j in 0..p {
                let col = x.column(j);
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..n {
                    let partial = z[i] - fit[i] + col[i] * b[j];
                    num += w[i] * col[i] * partial;
                    den += w[i] * col[i] * col[i];
                }
                num /= n as f64;
                den /= n as f64;
                if den <= 0.0 {
                    continue;
                }
                let nb = if j == 0 { num / den } else { soft_threshold(num, lambda) / den };
                if nb != b[j] {
                    for i in 0..n {
                        fit[i] += col[i] * (nb - b[j]);
                    }
                    delta = delta.max((nb - b[j]).abs());
                    b[j] = nb;
                }
            }
            if delta < 1e-9 {
                break;
            }
        }
        // damp the proximal Newton step until the penalized objective drops
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = coef.iter().zip(&b).map(|(c, nb)| c + t * (nb - c)).collect();
            let fc = objective(&cand);
            if fc <= f + 1e-12 {
                let df = f - fc;
                coef = cand;
                f = fc;
                accepted = true;
                if df < 1e-10 {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
    }
    if coef.iter().any(|c| !c.is_finite() || c.abs() > 1e3) {
        return Err(SmaError::Numerical("penalized logistic fit diverged".into()));
    }
    Ok(LogisticFit { nll: mean_nll(&linear_predictor(x, &coef, &zero), r), coef, converged })
}

fn soft_threshold(v: f64, l: f64) -> f64 {
    if v > l {
        v - l
    } else if v < -l {
        v + l
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn symmetric_start_gives_log_two() {
        let eta = vec![0.0; 7];
        let r = vec![true, false, true, true, false, false, true];
        assert!((mean_nll(&eta, &r) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_matches_closed_form() {
        // P(r=1) = 1/(1+e^phi) = 0.3  =>  phi = ln(7/3)
        let x = DMatrix::from_element(10, 1, 1.0);
        let r: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let fit = fit_logistic(&x, &r, &[0.0; 10], None, 0.0, 50).unwrap();
        assert!(fit.converged);
        assert!((fit.coef[0] - (7.0f64 / 3.0).ln()).abs() < 1e-9);
    }
}
