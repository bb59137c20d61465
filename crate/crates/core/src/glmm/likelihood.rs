//! Marginal log-likelihood of the random-intercept logistic model.
//!
//! For cluster `k` with fixed linear predictors `η_i = x_i'β` the integrand is
//! `exp(g_k(z)) / sqrt(2πσ²)` with
//! `g_k(z) = Σ_i w_i [y_i (η_i + z) − log(1 + e^(η_i + z))] − z² / (2σ²)`.
//! Both approximations below are centred at the mode of `g_k` and scaled by
//! its curvature there.

use crate::error::{Error, Result};
use crate::logistic::{log1p_exp, sigmoid};

use super::design::GlmmDesign;

/// Inner Newton iterations allowed per cluster.
pub const MAX_INNER: usize = 50;
const MODE_TOL: f64 = 1e-10;

/// Linear predictors `x_i'β` for every row.
pub fn fixed_predictor(design: &GlmmDesign, beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != design.ncols() {
        return Err(Error::Shape(format!(
            "{} coefficients for {} design columns",
            beta.len(),
            design.ncols()
        )));
    }
    Ok((0..design.rows())
        .map(|i| design.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect())
}

/// Mode of `g_k` and the curvature `−g_k''` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterMode {
    pub z: f64,
    /// `Σ w μ(1−μ) + 1/σ²` at the mode.
    pub curvature: f64,
    /// `Σ w μ(1−μ)` at the mode.
    pub data_curvature: f64,
    /// Data part of `g_k` at the mode (without the prior term).
    pub data_loglik: f64,
    pub iterations: usize,
}

struct Sums {
    loglik: f64,
    score: f64,
    info: f64,
}

fn cluster_sums(y: &[f64], w: &[f64], eta: &[f64], z: f64) -> Sums {
    let mut s = Sums {
        loglik: 0.0,
        score: 0.0,
        info: 0.0,
    };
    for ((&yi, &wi), &e) in y.iter().zip(w).zip(eta) {
        let t = e + z;
        let mu = sigmoid(t);
        s.loglik += wi * (yi * t - log1p_exp(t));
        s.score += wi * (yi - mu);
        s.info += wi * mu * (1.0 - mu);
    }
    s
}

/// Guarded Newton ascent on `g_k` from `z = 0`.
pub fn cluster_mode(
    y: &[f64],
    w: &[f64],
    eta: &[f64],
    sigma: f64,
    cluster: usize,
) -> Result<ClusterMode> {
    let prec = 1.0 / (sigma * sigma);
    let objective = |s: &Sums, z: f64| s.loglik - 0.5 * prec * z * z;
    let mut z = 0.0;
    let mut s = cluster_sums(y, w, eta, z);
    let mut g = objective(&s, z);
    for it in 1..=MAX_INNER {
        let grad = s.score - prec * z;
        let curv = s.info + prec;
        let mut step = grad / curv;
        let (mut zn, mut sn, mut gn);
        loop {
            zn = z + step;
            sn = cluster_sums(y, w, eta, zn);
            gn = objective(&sn, zn);
            // concave objective: halving always recovers ascent
            if gn >= g - 1e-12 * g.abs() || step.abs() < MODE_TOL {
                break;
            }
            step *= 0.5;
        }
        if !(gn.is_finite() && zn.is_finite()) {
            return Err(Error::NonFinite(format!(
                "random-effect mode in cluster {cluster}"
            )));
        }
        z = zn;
        s = sn;
        g = gn;
        if step.abs() < MODE_TOL {
            return Ok(ClusterMode {
                z,
                curvature: s.info + prec,
                data_curvature: s.info,
                data_loglik: s.loglik,
                iterations: it,
            });
        }
    }
    Err(Error::NonFinite(format!(
        "random-effect mode in cluster {cluster} did not converge in {MAX_INNER} Newton steps"
    )))
}

/// Laplace log-likelihood with its gradient in `(β, log σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceEval {
    pub loglik: f64,
    /// `∂/∂β` then `∂/∂ log σ`.
    pub gradient: Vec<f64>,
    pub modes: Vec<f64>,
    pub max_inner: usize,
}

/// Ordinary logistic log-likelihood, all random effects at zero.
fn pooled(design: &GlmmDesign, eta: &[f64]) -> LaplaceEval {
    let p = design.ncols();
    let mut ll = 0.0;
    let mut grad = vec![0.0; p + 1];
    for k in 0..design.nclusters() {
        let mut part = 0.0;
        for i in design.cluster_rows(k) {
            let (y, w) = (design.y()[i], design.weights()[i]);
            part += w * (y * eta[i] - log1p_exp(eta[i]));
            let r = w * (y - sigmoid(eta[i]));
            for (g, x) in grad.iter_mut().zip(design.row(i)) {
                *g += r * x;
            }
        }
        ll += part;
    }
    LaplaceEval {
        loglik: ll,
        gradient: grad,
        modes: vec![0.0; design.nclusters()],
        max_inner: 0,
    }
}

pub fn laplace_eval(design: &GlmmDesign, beta: &[f64], sigma: f64) -> Result<LaplaceEval> {
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let eta = fixed_predictor(design, beta)?;
    if sigma == 0.0 {
        return Ok(pooled(design, &eta));
    }
    let p = design.ncols();
    let s2 = sigma * sigma;
    let mut ll = 0.0;
    let mut grad = vec![0.0; p + 1];
    let mut modes = Vec::with_capacity(design.nclusters());
    let mut max_inner = 0;
    let mut dz_db = vec![0.0; p];
    let mut dh_db = vec![0.0; p];
    for k in 0..design.nclusters() {
        let r = design.cluster_rows(k);
        let (y, w, e) = (
            &design.y()[r.clone()],
            &design.weights()[r.clone()],
            &eta[r.clone()],
        );
        let m = cluster_mode(y, w, e, sigma, k)?;
        max_inner = max_inner.max(m.iterations);
        let z = m.z;
        let h = m.curvature;
        let term = m.data_loglik - 0.5 * z * z / s2 - 0.5 * (s2 * m.data_curvature).ln_1p();
        if !term.is_finite() {
            return Err(Error::NonFinite(format!("Laplace term for cluster {k}")));
        }
        ll += term;
        modes.push(z);

        // dẑ/dβ = −Σ w v x / H, with v = μ(1−μ)
        dz_db.iter_mut().for_each(|v| *v = 0.0);
        for i in r.clone() {
            let mu = sigmoid(eta[i] + z);
            let v = design.weights()[i] * mu * (1.0 - mu);
            for (d, x) in dz_db.iter_mut().zip(design.row(i)) {
                *d -= v * x / h;
            }
        }
        let dz_dtau = 2.0 * z / (s2 * h);
        dh_db.iter_mut().for_each(|v| *v = 0.0);
        let mut dh_dtau = -2.0 / s2;
        for i in r {
            let mu = sigmoid(eta[i] + z);
            let wi = design.weights()[i];
            let v3 = wi * mu * (1.0 - mu) * (1.0 - 2.0 * mu);
            let resid = wi * (design.y()[i] - mu);
            for (j, x) in design.row(i).iter().enumerate() {
                grad[j] += resid * x;
                dh_db[j] += v3 * (x + dz_db[j]);
            }
            dh_dtau += v3 * dz_dtau;
        }
        for j in 0..p {
            grad[j] -= 0.5 * dh_db[j] / h;
        }
        grad[p] += z * z / s2 - 1.0 - 0.5 * dh_dtau / h;
    }
    Ok(LaplaceEval {
        loglik: ll,
        gradient: grad,
        modes,
        max_inner,
    })
}

/// Laplace approximation to the marginal log-likelihood. At `sigma = 0`
/// this is the ordinary logistic log-likelihood.
pub fn laplace_loglik(design: &GlmmDesign, beta: &[f64], sigma: f64) -> Result<f64> {
    laplace_eval(design, beta, sigma).map(|e| e.loglik)
}

/// Gauss-Hermite rule for weight `e^{−x²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch for a starting point, then Newton polishing on the
    /// orthonormal Hermite recurrence; weights from the Christoffel function.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let orthonormal = |x: f64| -> (f64, f64, f64) {
            // returns (p_n, p_{n-1}, Σ_{k<n} p_k²)
            let mut prev = 0.0;
            let mut cur = std::f64::consts::PI.powf(-0.25);
            let mut sum_sq = 0.0;
            for k in 0..n {
                sum_sq += cur * cur;
                let next = x * (2.0 / (k as f64 + 1.0)).sqrt() * cur
                    - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
                prev = cur;
                cur = next;
            }
            (cur, prev, sum_sq)
        };
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (pn, pn1, _) = orthonormal(*x);
                let deriv = (2.0 * n as f64).sqrt() * pn1;
                if deriv != 0.0 {
                    *x -= pn / deriv;
                }
            }
            if n % 2 == 1 && x.abs() < 1e-14 {
                *x = 0.0;
            }
            let (_, _, sum_sq) = orthonormal(*x);
            weights.push(1.0 / sum_sq);
        }
        Self { nodes, weights }
    }
}

/// Adaptive Gauss-Hermite marginal log-likelihood. With one node it equals
/// [`laplace_loglik`].
pub fn aghq_loglik(design: &GlmmDesign, beta: &[f64], sigma: f64, nodes: usize) -> Result<f64> {
    aghq_eval(design, beta, sigma, &GaussHermite::new(nodes)).map(|e| e.loglik)
}

/// AGHQ value and the gradient obtained by differentiating the quadrature
/// sum with the node placement held fixed.
pub fn aghq_eval(
    design: &GlmmDesign,
    beta: &[f64],
    sigma: f64,
    rule: &GaussHermite,
) -> Result<LaplaceEval> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!(
            "adaptive quadrature needs sigma > 0, got {sigma}"
        )));
    }
    let eta = fixed_predictor(design, beta)?;
    let p = design.ncols();
    let s2 = sigma * sigma;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    let mut grad = vec![0.0; p + 1];
    let mut modes = Vec::with_capacity(design.nclusters());
    let mut max_inner = 0;
    let q = rule.nodes.len();
    let mut terms = vec![0.0; q];
    let mut zs = vec![0.0; q];
    for k in 0..design.nclusters() {
        let r = design.cluster_rows(k);
        let (y, w, e) = (
            &design.y()[r.clone()],
            &design.weights()[r.clone()],
            &eta[r.clone()],
        );
        let m = cluster_mode(y, w, e, sigma, k)?;
        max_inner = max_inner.max(m.iterations);
        modes.push(m.z);
        let scale = std::f64::consts::SQRT_2 / m.curvature.sqrt();
        for (i, (&x, &wt)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let z = m.z + scale * x;
            let data = if q == 1 {
                m.data_loglik
            } else {
                cluster_sums(y, w, e, z).loglik
            };
            zs[i] = z;
            terms[i] = wt.ln() + x * x + data - 0.5 * z * z / s2;
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        let term = scale.ln() + max + sum.ln() - 0.5 * (ln2pi + s2.ln());
        if !term.is_finite() {
            return Err(Error::NonFinite(format!("quadrature term for cluster {k}")));
        }
        ll += term;

        for i in 0..q {
            let weight = (terms[i] - max).exp() / sum;
            let z = zs[i];
            for row in r.clone() {
                let resid = design.weights()[row] * (design.y()[row] - sigmoid(eta[row] + z));
                for (g, x) in grad.iter_mut().zip(design.row(row)) {
                    *g += weight * resid * x;
                }
            }
            grad[p] += weight * z * z / s2;
        }
        grad[p] -= 1.0;
    }
    Ok(LaplaceEval {
        loglik: ll,
        gradient: grad,
        modes,
        max_inner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::design::{Column, ColumnKind};

    fn intercept_design(y: Vec<f64>, cluster: Vec<usize>, k: usize) -> GlmmDesign {
        let n = y.len();
        GlmmDesign::new(
            vec![Column {
                name: "(Intercept)".into(),
                kind: ColumnKind::Intercept,
            }],
            (0..k).map(|i| i.to_string()).collect(),
            y,
            vec![1.0; n],
            cluster,
            None,
        )
        .unwrap()
    }

    #[test]
    fn gauss_hermite_moments() {
        for n in [1, 2, 5, 20, 50] {
            let r = GaussHermite::new(n);
            let m0: f64 = r.weights.iter().sum();
            assert!((m0 - std::f64::consts::PI.sqrt()).abs() < 1e-12, "n={n}");
            if n >= 2 {
                let m2: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
                assert!((m2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
            }
        }
        let r = GaussHermite::new(1);
        assert_eq!(r.nodes, vec![0.0]);
    }

    #[test]
    fn balanced_cluster_mode_is_zero() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let m = cluster_mode(&y, &[1.0; 4], &[0.0; 4], 1.3, 0).unwrap();
        assert!(m.z.abs() < 1e-14);
    }

    #[test]
    fn sigma_zero_is_pooled_logistic() {
        let d = intercept_design(vec![1.0, 0.0, 0.0, 1.0, 1.0], vec![0, 0, 1, 1, 1], 2);
        let b = 0.3;
        let direct: f64 = d
            .y()
            .iter()
            .map(|&y| y * b - (1.0 + f64::exp(b)).ln())
            .sum();
        assert!((laplace_loglik(&d, &[b], 0.0).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn tiny_sigma_approaches_pooled_limit() {
        let d = intercept_design(vec![1.0, 0.0, 0.0, 1.0, 1.0], vec![0, 0, 1, 1, 1], 2);
        let a = laplace_loglik(&d, &[0.3], 0.0).unwrap();
        let b = laplace_loglik(&d, &[0.3], 1e-8).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn one_node_quadrature_is_laplace() {
        let d = intercept_design(
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![0, 0, 1, 1, 1, 2],
            3,
        );
        for sigma in [0.1, 0.7, 2.5] {
            let l = laplace_loglik(&d, &[-0.4], sigma).unwrap();
            let a = aghq_loglik(&d, &[-0.4], sigma, 1).unwrap();
            assert!((l - a).abs() < 1e-12, "{sigma}: {l} vs {a}");
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let d = intercept_design(vec![1.0, 0.0], vec![0, 1], 2);
        assert!(laplace_loglik(&d, &[0.0], -1.0).is_err());
        assert!(aghq_loglik(&d, &[0.0], 0.0, 5).is_err());
        assert!(laplace_loglik(&d, &[0.0, 1.0], 1.0).is_err());
    }
}
