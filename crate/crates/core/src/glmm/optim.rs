//! BFGS minimization with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Relative size of a decrease still distinguishable from rounding.
const PRECISION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative objective change required for convergence.
    pub rel_tol: f64,
    /// Gradient max-norm required for convergence.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-9,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f`, which returns the value and gradient at a point.
/// Converged means the gradient max-norm is under `grad_tol`, or the last
/// step changed the value by less than `rel_tol` and the predicted
/// quasi-Newton decrease is below the value's working precision. The second
/// rule matters for large sums, where an absolute gradient bound can sit
/// under the objective's rounding noise.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut fx, g0) = f(x.as_slice())?;
    let mut g = DVector::from_vec(g0);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_rel = f64::INFINITY;
    let settled = |g: &DVector<f64>, hinv: &DMatrix<f64>, fx: f64, last_rel: f64| {
        g.amax() < opts.grad_tol
            || (last_rel < opts.rel_tol
                && 0.5 * g.dot(&(hinv * g)).abs() <= PRECISION * fx.abs().max(1.0))
    };

    while iterations < opts.max_iter {
        if !first && settled(&g, &hinv, fx, last_rel) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = -(&hinv * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            d = -g.clone();
            slope = g.dot(&d);
        }
        if first {
            // unit-sized opening step before any curvature is known
            let scale = d.amax().max(1e-12);
            d /= scale;
            slope /= scale;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * t;
            if let Ok((fxn, gn)) = f(xn.as_slice()) {
                if fxn.is_finite() && fxn <= fx + 1e-4 * t * slope {
                    accepted = Some((xn, fxn, DVector::from_vec(gn)));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fxn, gn)) = accepted else {
            // no decrease along the search direction at any step length
            converged = !first && settled(&g, &hinv, fx, last_rel);
            break;
        };
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first {
                hinv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        first = false;
        last_rel = (fx - fxn).abs() / fxn.abs().max(1.0);
        x = xn;
        fx = fxn;
        g = gn;
    }
    Ok(BfgsResult {
        x: x.iter().copied().collect(),
        value: fx,
        gradient: g.iter().copied().collect(),
        iterations,
        converged,
    })
}
