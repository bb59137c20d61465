use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named p-values in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSet {
    entries: Vec<(String, f64)>,
}

impl PValueSet {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        let mut names = HashSet::new();
        for (name, p) in &entries {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Invalid(format!(
                    "p-value for {name:?} is {p}, outside (0, 1]"
                )));
            }
            if !names.insert(name.as_str()) {
                return Err(Error::Invalid(format!("duplicate test name {name:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, p)| *p).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| *p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Benjamini-Hochberg step-up adjustment: with `p(1) ≤ … ≤ p(m)`,
/// `adjusted(k) = min(1, min_{j ≥ k} m p(j) / j)`. Ties keep input order.
pub fn bh_adjust(pvalues: &PValueSet) -> Result<PValueSet> {
    let m = pvalues.len();
    if m == 0 {
        return Err(Error::Invalid("no p-values to adjust".into()));
    }
    let p = pvalues.values();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p[i] / (rank0 + 1) as f64);
        // m p(j) / j >= p(k) in exact arithmetic; guard against rounding below it
        adjusted[i] = running.min(1.0).max(p[i]);
    }
    Ok(PValueSet {
        entries: pvalues
            .entries
            .iter()
            .zip(adjusted)
            .map(|((name, _), a)| (name.clone(), a))
            .collect(),
    })
}
