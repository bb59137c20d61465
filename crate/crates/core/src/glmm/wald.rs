use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::design::{ColumnKind, GlmmDesign};
use super::fit::GlmmFit;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Two-sided Wald p-value `2 (1 − Φ(|z|))`, kept strictly positive.
pub fn two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub odds_ratio: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_raw: Option<f64>,
    /// Standardization SD for numeric covariates, in covariate units.
    pub per_sd: Option<f64>,
}

impl OddsRatioRow {
    pub fn from_estimate(name: impl Into<String>, estimate: f64, se: Option<f64>) -> Self {
        let se = se.filter(|s| s.is_finite() && *s > 0.0);
        Self {
            name: name.into(),
            estimate,
            se,
            odds_ratio: estimate.exp(),
            ci_low: se.map(|s| (estimate - Z_95 * s).exp()),
            ci_high: se.map(|s| (estimate + Z_95 * s).exp()),
            p_raw: se.map(|s| two_sided_p(estimate / s)),
            per_sd: None,
        }
    }

    /// Missing standard error (singular information).
    pub fn flagged(&self) -> bool {
        self.se.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioTable {
    pub rows: Vec<OddsRatioRow>,
}

/// One row per non-intercept coefficient.
pub fn wald_table(fit: &GlmmFit, design: &GlmmDesign) -> Result<OddsRatioTable> {
    if fit.beta.len() != design.ncols() {
        return Err(Error::Shape(format!(
            "fit has {} coefficients, design {} columns",
            fit.beta.len(),
            design.ncols()
        )));
    }
    if !fit.converged {
        log::warn!("Wald table built from a fit that did not converge");
    }
    let rows = design
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind != ColumnKind::Intercept)
        .map(|(j, c)| {
            let mut row = OddsRatioRow::from_estimate(c.name.clone(), fit.beta[j], fit.se[j]);
            if let ColumnKind::Numeric { sd, .. } = c.kind {
                row.per_sd = Some(sd);
            }
            if row.flagged() {
                log::warn!("no standard error for {}; row flagged", c.name);
            }
            row
        })
        .collect();
    Ok(OddsRatioTable { rows })
}

impl OddsRatioTable {
    pub fn p_values(&self) -> Vec<(String, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.p_raw.map(|p| (r.name.clone(), p)))
            .collect()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}
