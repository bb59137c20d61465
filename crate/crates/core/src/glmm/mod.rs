//! Random-intercept logistic mixed model:
//! `logit Pr(y_ik = 1) = x_ik'β + z_k`, `z_k ~ N(0, σ²)`, one intercept per school.

mod design;
mod fit;
mod likelihood;
mod optim;
mod wald;

pub use design::{build_design, Column, ColumnKind, GlmmDesign, ReferenceLevels};
pub use fit::{fit_glmm, fit_glmm_with, Approximation, GlmmFit, GlmmOptions};
pub use likelihood::{
    aghq_eval, aghq_loglik, cluster_mode, fixed_predictor, laplace_eval, laplace_loglik,
    ClusterMode, GaussHermite, LaplaceEval, MAX_INNER,
};
pub use optim::{minimize, BfgsOptions, BfgsResult};
pub use wald::{two_sided_p, wald_table, OddsRatioRow, OddsRatioTable, Z_95};
