//! Maximum-likelihood logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood `y η − log(1 + e^η)`.
pub fn bernoulli_loglik(y: f64, eta: f64) -> f64 {
    y * eta - log1p_exp(eta)
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// columns, found by a pivot-free Cholesky sweep of the Gram matrix.
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let p = x.ncols();
    let gram = x.transpose() * x;
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p {
        let mut d = gram[(j, j)];
        for &k in &kept {
            let mut s = gram[(j, k)];
            for &m in kept.iter().take_while(|&&m| m < k) {
                s -= l[(j, m)] * l[(k, m)];
            }
            l[(j, k)] = s / l[(k, k)];
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 1e-10 * gram[(j, j)].max(f64::MIN_POSITIVE) {
            dropped.push(j);
        } else {
            l[(j, j)] = d.sqrt();
            kept.push(j);
        }
    }
    dropped
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Stop when every coefficient moves less than this.
    pub coef_tol: f64,
    /// Or when the relative deviance change falls below this.
    pub deviance_tol: f64,
    /// Coefficient norm beyond which a still-improving fit is declared
    /// separated; also the linear-predictor magnitude treated as saturated.
    pub separation_bound: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            coef_tol: 1e-10,
            deviance_tol: 1e-12,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separated: bool,
}

pub fn deviance(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    weighted_deviance(x, y, None, beta)
}

fn weighted_deviance(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    beta: &DVector<f64>,
) -> f64 {
    let eta = x * beta;
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    -2.0 * eta
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (&e, &yi))| w(i) * bernoulli_loglik(yi, e))
        .sum::<f64>()
}

/// Newton-Raphson (equivalently IRLS) with step halving on deviance increase.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], opts: &IrlsOptions) -> Result<LogisticFit> {
    fit_logistic_weighted(x, y, None, opts)
}

/// As [`fit_logistic`] with per-row frequency weights.
pub fn fit_logistic_weighted(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    opts: &IrlsOptions,
) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Shape(format!("{} responses for {n} rows", y.len())));
    }
    let wt = |i: usize| weights.map_or(1.0, |w| w[i]);
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Invalid("responses must lie in [0, 1]".into()));
    }
    let collinear = collinear_columns(x);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(
            collinear.iter().map(|j| format!("column {j}")).collect(),
        ));
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut dev = weighted_deviance(x, y, weights, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut separated = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let eta = x * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = mu
            .iter()
            .enumerate()
            .map(|(i, &m)| wt(i) * m * (1.0 - m))
            .collect();
        let resid = DVector::from_iterator(
            n,
            y.iter()
                .zip(&mu)
                .enumerate()
                .map(|(i, (yi, m))| wt(i) * (yi - m)),
        );
        let score = x.transpose() * resid;
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            for a in 0..p {
                let wa = w[i] * row[a];
                for b in 0..=a {
                    info[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let Some(chol) = info.cholesky() else {
            // weights have collapsed onto the boundary
            separated = true;
            break;
        };
        let delta = chol.solve(&score);

        let mut t = 1.0;
        let (mut next, mut next_dev);
        loop {
            next = &beta + &delta * t;
            next_dev = weighted_deviance(x, y, weights, &next);
            if next_dev <= dev || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let max_change = (&next - &beta).amax();
        let rel = (dev - next_dev).abs() / (next_dev.abs() + 0.1);
        let improving = next_dev < dev;
        beta = next;
        dev = next_dev;
        if beta.norm() > opts.separation_bound && improving {
            separated = true;
            break;
        }
        if max_change < opts.coef_tol || rel < opts.deviance_tol {
            converged = true;
            break;
        }
    }
    // fitted probabilities numerically 0 or 1
    if (x * &beta).amax() > opts.separation_bound {
        separated = true;
    }
    Ok(LogisticFit {
        coef: beta.iter().copied().collect(),
        deviance: dev,
        iterations,
        converged,
        separated,
    })
}
