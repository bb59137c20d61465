use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::{collinear_columns, fit_logistic_weighted, IrlsOptions};

use super::design::GlmmDesign;
use super::likelihood::{aghq_eval, laplace_eval, GaussHermite, LaplaceEval};
use super::optim::{minimize, BfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Approximation {
    #[default]
    Laplace,
    Aghq {
        nodes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmmOptions {
    pub approximation: Approximation,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub sigma_floor: f64,
    pub sigma_start: f64,
    /// Hold σ at this value and optimize β only.
    pub fixed_sigma: Option<f64>,
    /// Relative finite-difference step for the Hessian.
    pub hessian_step: f64,
}

impl Default for GlmmOptions {
    fn default() -> Self {
        Self {
            approximation: Approximation::Laplace,
            max_iter: 500,
            rel_tol: 1e-9,
            grad_tol: 1e-5,
            sigma_floor: 1e-8,
            sigma_start: 1.0,
            fixed_sigma: None,
            hessian_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmFit {
    pub columns: Vec<String>,
    /// Intercept first, in design column order.
    pub beta: Vec<f64>,
    /// `None` where the information matrix is not positive definite.
    pub se: Vec<Option<f64>>,
    pub sigma: f64,
    pub modes: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    /// σ was driven to the floor.
    pub boundary: bool,
    pub outer_iterations: usize,
    pub inner_max_iterations: usize,
    pub approximation: Approximation,
    pub clusters: usize,
    pub observations: f64,
}

fn evaluate(
    design: &GlmmDesign,
    approx: Approximation,
    rule: Option<&GaussHermite>,
    beta: &[f64],
    sigma: f64,
) -> Result<LaplaceEval> {
    match (approx, rule) {
        (Approximation::Aghq { .. }, Some(rule)) if sigma > 0.0 => {
            aghq_eval(design, beta, sigma, rule)
        }
        _ => laplace_eval(design, beta, sigma),
    }
}

/// Laplace fit with default options.
pub fn fit_glmm(design: &GlmmDesign) -> Result<GlmmFit> {
    fit_glmm_with(design, &GlmmOptions::default())
}

/// Maximizes the approximate marginal log-likelihood over `(β, log σ)` by
/// BFGS, then takes standard errors from the inverse of the negative
/// finite-difference Hessian.
pub fn fit_glmm_with(design: &GlmmDesign, opts: &GlmmOptions) -> Result<GlmmFit> {
    let occupied = (0..design.nclusters())
        .filter(|&k| !design.cluster_rows(k).is_empty())
        .count();
    if occupied < 2 {
        return Err(Error::Invalid(format!(
            "mixed model needs at least 2 clusters, found {occupied}"
        )));
    }
    let x = design.x_matrix();
    let collinear = collinear_columns(&x);
    if !collinear.is_empty() {
        let names = design.column_names();
        return Err(Error::RankDeficient(
            collinear.into_iter().map(|j| names[j].clone()).collect(),
        ));
    }
    if let Approximation::Aghq { nodes: 0 } = opts.approximation {
        return Err(Error::Config("quadrature needs at least one node".into()));
    }
    let rule = match opts.approximation {
        Approximation::Aghq { nodes } => Some(GaussHermite::new(nodes)),
        Approximation::Laplace => None,
    };
    let rule = rule.as_ref();
    let p = design.ncols();
    let tau_floor = opts.sigma_floor.ln();

    let pooled = fit_logistic_weighted(
        &x,
        design.y(),
        Some(design.weights()),
        &IrlsOptions::default(),
    )?;
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        rel_tol: opts.rel_tol,
        grad_tol: opts.grad_tol,
    };
    let mut inner_max = 0;

    let fit_beta = |sigma: f64, start: Vec<f64>, inner: &mut usize| {
        minimize(
            |b| {
                let e = evaluate(design, opts.approximation, rule, b, sigma)?;
                *inner = (*inner).max(e.max_inner);
                Ok((-e.loglik, e.gradient[..p].iter().map(|g| -g).collect()))
            },
            start,
            &bfgs,
        )
    };

    let (beta, sigma, iterations, converged, boundary) = if let Some(sigma) = opts.fixed_sigma {
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!(
                "fixed sigma must be >= 0, got {sigma}"
            )));
        }
        let r = fit_beta(sigma, pooled.coef.clone(), &mut inner_max)?;
        (r.x, sigma, r.iterations, r.converged, false)
    } else {
        let mut start = pooled.coef.clone();
        start.push(opts.sigma_start.ln());
        let r = minimize(
            |theta| {
                let tau = theta[p].max(tau_floor);
                let e = evaluate(design, opts.approximation, rule, &theta[..p], tau.exp())?;
                inner_max = inner_max.max(e.max_inner);
                let mut g: Vec<f64> = e.gradient.iter().map(|g| -g).collect();
                if theta[p] < tau_floor {
                    g[p] = 0.0;
                }
                Ok((-e.loglik, g))
            },
            start,
            &bfgs,
        )?;
        let beta = r.x[..p].to_vec();
        let sigma = r.x[p].max(tau_floor).exp();
        let here = evaluate(design, opts.approximation, rule, &beta, sigma)?.loglik;
        let floor = evaluate(design, opts.approximation, rule, &beta, opts.sigma_floor)?.loglik;
        if sigma > opts.sigma_floor && floor >= here - opts.rel_tol * here.abs().max(1.0) {
            let polished = fit_beta(opts.sigma_floor, beta, &mut inner_max)?;
            (
                polished.x,
                opts.sigma_floor,
                r.iterations + polished.iterations,
                r.converged && polished.converged,
                true,
            )
        } else {
            (
                beta,
                sigma,
                r.iterations,
                r.converged,
                sigma <= opts.sigma_floor,
            )
        }
    };

    let at_opt = evaluate(design, opts.approximation, rule, &beta, sigma)?;
    inner_max = inner_max.max(at_opt.max_inner);

    // Hessian over the free parameters: β, plus log σ when it is interior.
    let with_tau = opts.fixed_sigma.is_none() && !boundary;
    let dim = if with_tau { p + 1 } else { p };
    let mut theta: Vec<f64> = beta.clone();
    if with_tau {
        theta.push(sigma.ln());
    }
    let grad_at = |t: &[f64]| -> Result<Vec<f64>> {
        let s = if with_tau { t[p].exp() } else { sigma };
        let e = evaluate(design, opts.approximation, rule, &t[..p], s)?;
        Ok(e.gradient[..dim].to_vec())
    };
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..dim {
        let h = opts.hessian_step * theta[k].abs().max(1.0);
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[k] += h;
        down[k] -= h;
        let (gu, gd) = (grad_at(&up)?, grad_at(&down)?);
        for j in 0..dim {
            hess[(j, k)] = (gu[j] - gd[j]) / (2.0 * h);
        }
    }
    let info = -(&hess + hess.transpose()) * 0.5;
    let se = match info.clone().cholesky() {
        Some(chol) => {
            let cov = chol.inverse();
            (0..p)
                .map(|j| Some(cov[(j, j)].sqrt()).filter(|s| s.is_finite() && *s > 0.0))
                .collect()
        }
        None => {
            log::warn!("information matrix is not positive definite; standard errors unavailable");
            vec![None; p]
        }
    };

    Ok(GlmmFit {
        columns: design.column_names(),
        beta,
        se,
        sigma,
        modes: at_opt.modes,
        loglik: at_opt.loglik,
        converged,
        boundary,
        outer_iterations: iterations,
        inner_max_iterations: inner_max,
        approximation: opts.approximation,
        clusters: occupied,
        observations: design.total_weight(),
    })
}
