//! Ridge-stabilized logistic regression: binary IRLS and multinomial Newton.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::logistic;

/// Ridge penalty always applied to non-intercept coefficients.
pub const BASE_RIDGE: f64 = 1e-6;
/// Penalty used after separation is detected.
pub const SEPARATION_RIDGE: f64 = 1e-2;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;
/// Linear predictors beyond this magnitude are taken as a sign of separation.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per column.
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub ridge: f64,
    pub separated: bool,
}

impl LogisticFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        logistic(self.linear(row))
    }

    pub fn linear(&self, row: &[f64]) -> f64 {
        self.coef[0] + row.iter().zip(&self.coef[1..]).map(|(x, b)| x * b).sum::<f64>()
    }
}

fn design(rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("logistic fit on zero rows".into()));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("design rows must be finite and of equal length".into()));
    }
    Ok((n, p + 1))
}

fn irls(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<(Vec<f64>, usize, bool)> {
    let (n, q) = design(rows)?;
    let x = |i: usize, a: usize| if a == 0 { 1.0 } else { rows[i][a - 1] };
    let mut beta = DVector::<f64>::zeros(q);
    let mut wild = false;
    for it in 1..=MAX_ITER {
        let mut h = DMatrix::<f64>::zeros(q, q);
        let mut g = DVector::<f64>::zeros(q);
        for i in 0..n {
            let eta: f64 = (0..q).map(|a| x(i, a) * beta[a]).sum();
            wild |= eta.abs() > SEPARATION_ETA;
            let mu = logistic(eta);
            let w = (mu * (1.0 - mu)).max(1e-12);
            for a in 0..q {
                let xa = x(i, a);
                g[a] += xa * (y[i] - mu);
                for b in 0..=a {
                    h[(a, b)] += w * xa * x(i, b);
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for a in 1..q {
            h[(a, a)] += ridge;
            g[a] -= ridge * beta[a];
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Convergence("logistic Hessian is not positive definite".into()))?
            .solve(&g);
        beta += &step;
        if step.amax() < TOL {
            return Ok((beta.iter().copied().collect(), it, wild));
        }
    }
    Err(Error::Convergence(format!(
        "IRLS did not converge in {MAX_ITER} iterations (ridge {ridge}, |beta|max {:.3e})",
        beta.amax()
    )))
}

/// Fits `P(y = 1 | x)` by iteratively reweighted least squares.
///
/// Outcomes may be fractional in `[0, 1]`. When the fit shows signs of
/// separation (huge linear predictors or non-convergence) it is repeated
/// with a stronger ridge penalty and `separated` is set.
pub fn fit_logistic(rows: &[Vec<f64>], y: &[f64]) -> Result<LogisticFit> {
    if rows.len() != y.len() {
        return Err(Error::Domain("outcome and design lengths differ".into()));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("logistic outcomes must lie in [0, 1]".into()));
    }
    match irls(rows, y, BASE_RIDGE) {
        Ok((coef, iterations, false)) => Ok(LogisticFit {
            coef,
            iterations,
            ridge: BASE_RIDGE,
            separated: false,
        }),
        _ => {
            let (coef, iterations, _) = irls(rows, y, SEPARATION_RIDGE)?;
            Ok(LogisticFit {
                coef,
                iterations,
                ridge: SEPARATION_RIDGE,
                separated: true,
            })
        }
    }
}

/// Multinomial logistic model with class 0 as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialFit {
    pub n_classes: usize,
    /// One row per non-reference class: intercept then slopes.
    pub coef: Vec<Vec<f64>>,
    pub ridge: f64,
    pub separated: bool,
}

impl MultinomialFit {
    pub fn predict(&self, row: &[f64]) -> Vec<f64> {
        let mut eta = Vec::with_capacity(self.n_classes);
        eta.push(0.0);
        for b in &self.coef {
            eta.push(b[0] + row.iter().zip(&b[1..]).map(|(x, c)| x * c).sum::<f64>());
        }
        softmax(&eta)
    }
}

fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn multinomial_newton(rows: &[Vec<f64>], class: &[usize], k: usize, ridge: f64) -> Result<(Vec<Vec<f64>>, bool)> {
    let (n, q) = design(rows)?;
    let dim = (k - 1) * q;
    let x = |i: usize, a: usize| if a == 0 { 1.0 } else { rows[i][a - 1] };
    let mut beta = DVector::<f64>::zeros(dim);
    let mut wild = false;
    let mut xi = vec![0.0; q];
    for _ in 0..MAX_ITER {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for i in 0..n {
            for (a, v) in xi.iter_mut().enumerate() {
                *v = x(i, a);
            }
            let mut eta = vec![0.0; k];
            for j in 1..k {
                eta[j] = (0..q).map(|a| xi[a] * beta[(j - 1) * q + a]).sum();
                wild |= eta[j].abs() > SEPARATION_ETA;
            }
            let p = softmax(&eta);
            for j in 1..k {
                let r = f64::from(u8::from(class[i] == j)) - p[j];
                for a in 0..q {
                    g[(j - 1) * q + a] += r * xi[a];
                }
                for l in 1..=j {
                    let w = p[j] * (f64::from(u8::from(j == l)) - p[l]);
                    for a in 0..q {
                        for b in 0..q {
                            h[((j - 1) * q + a, (l - 1) * q + b)] += w * xi[a] * xi[b];
                        }
                    }
                }
            }
        }
        for r in 0..dim {
            for c in (r + 1)..dim {
                h[(r, c)] = h[(c, r)];
            }
        }
        for j in 1..k {
            for a in 1..q {
                let idx = (j - 1) * q + a;
                h[(idx, idx)] += ridge;
                g[idx] -= ridge * beta[idx];
            }
        }
        // tiny jitter on intercepts keeps empty classes solvable
        for j in 1..k {
            h[((j - 1) * q, (j - 1) * q)] += 1e-12;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Convergence("multinomial Hessian is not positive definite".into()))?
            .solve(&g);
        beta += &step;
        if step.amax() < TOL {
            let coef = (1..k)
                .map(|j| beta.rows((j - 1) * q, q).iter().copied().collect())
                .collect();
            return Ok((coef, wild));
        }
    }
    Err(Error::Convergence(format!(
        "multinomial Newton did not converge in {MAX_ITER} iterations (ridge {ridge})"
    )))
}

/// Fits class probabilities for labels `0..n_classes`.
pub fn fit_multinomial(rows: &[Vec<f64>], class: &[usize], n_classes: usize) -> Result<MultinomialFit> {
    if rows.len() != class.len() {
        return Err(Error::Domain("class and design lengths differ".into()));
    }
    if n_classes < 2 || class.iter().any(|&c| c >= n_classes) {
        return Err(Error::Domain(format!("class labels must lie in 0..{n_classes} with at least 2 classes")));
    }
    match multinomial_newton(rows, class, n_classes, BASE_RIDGE) {
        Ok((coef, false)) => Ok(MultinomialFit {
            n_classes,
            coef,
            ridge: BASE_RIDGE,
            separated: false,
        }),
        _ => {
            let (coef, _) = multinomial_newton(rows, class, n_classes, SEPARATION_RIDGE)?;
            Ok(MultinomialFit {
                n_classes,
                coef,
                ridge: SEPARATION_RIDGE,
                separated: true,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::task_rng;
    use rand::Rng;

    /// Independent Newton iteration for one covariate with an explicit 2×2
    /// inverse.
    fn newton_1d(x: &[f64], y: &[f64], ridge: f64) -> (f64, f64) {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (xi, yi) in x.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
                let w = p * (1.0 - p);
                g0 += yi - p;
                g1 += (yi - p) * xi;
                h00 += w;
                h01 += w * xi;
                h11 += w * xi * xi;
            }
            g1 -= ridge * b;
            h11 += ridge;
            let det = h00 * h11 - h01 * h01;
            a += (h11 * g0 - h01 * g1) / det;
            b += (h00 * g1 - h01 * g0) / det;
        }
        (a, b)
    }

    #[test]
    fn eight_rows_match_independent_newton() {
        let x = [-1.5, -0.7, -0.2, 0.1, 0.4, 0.9, 1.3, 2.0];
        let y = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let fit = fit_logistic(&rows, &y).unwrap();
        let (a, b) = newton_1d(&x, &y, BASE_RIDGE);
        assert!(!fit.separated);
        assert!((fit.coef[0] - a).abs() < 1e-8);
        assert!((fit.coef[1] - b).abs() < 1e-8);
    }

    #[test]
    fn separation_triggers_ridge() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| f64::from(u8::from(i >= 5))).collect();
        let fit = fit_logistic(&rows, &y).unwrap();
        assert!(fit.separated);
        assert_eq!(fit.ridge, SEPARATION_RIDGE);
        assert!(fit.coef.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn multinomial_recovers_generating_coefficients() {
        let mut rng = task_rng(3, "mnl", 0);
        let truth = [[-0.3, 1.5, -1.0], [0.4, -1.2, 1.6]];
        let mut rows = Vec::new();
        let mut class = Vec::new();
        for _ in 0..5000 {
            let r = vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            let eta = [
                0.0,
                truth[0][0] + truth[0][1] * r[0] + truth[0][2] * r[1],
                truth[1][0] + truth[1][1] * r[0] + truth[1][2] * r[1],
            ];
            let p = softmax(&eta);
            let u: f64 = rng.gen();
            class.push(if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 });
            rows.push(r);
        }
        let fit = fit_multinomial(&rows, &class, 3).unwrap();
        for j in 0..2 {
            for a in 1..3 {
                let rel = (fit.coef[j][a] - truth[j][a]).abs() / truth[j][a].abs();
                assert!(rel < 0.10, "class {} coef {a}: {} vs {}", j + 1, fit.coef[j][a], truth[j][a]);
            }
        }
    }

    #[test]
    fn multinomial_without_covariate_signal_gives_class_shares() {
        let rows = vec![vec![0.0]; 12];
        let class = [0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2];
        let fit = fit_multinomial(&rows, &class, 3).unwrap();
        let p = fit.predict(&[0.0]);
        assert!((p[0] - 0.25).abs() < 1e-8);
        assert!((p[1] - 0.5).abs() < 1e-8);
    }
}
