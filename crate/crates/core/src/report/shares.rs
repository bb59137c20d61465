use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stacker::Prediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareCell {
    pub school: String,
    pub year: i32,
    pub n: usize,
    pub n_neg: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareDiff {
    pub school: String,
    pub year: i32,
    /// Percentage points versus the base year; `None` without a base-year cell.
    pub diff_pp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NegativeShareTable {
    pub base_year: i32,
    /// Sorted by school, then year.
    pub cells: Vec<ShareCell>,
    pub diffs: Vec<ShareDiff>,
    /// Schools with no messages in the base year.
    pub missing_baseline: Vec<String>,
}

impl NegativeShareTable {
    pub fn years(&self) -> BTreeSet<i32> {
        self.cells.iter().map(|c| c.year).collect()
    }

    pub fn total_messages(&self) -> usize {
        self.cells.iter().map(|c| c.n).sum()
    }

    pub fn cell(&self, school: &str, year: i32) -> Option<&ShareCell> {
        self.cells
            .iter()
            .find(|c| c.school == school && c.year == year)
    }

    pub fn write_shares_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(["school", "year", "n", "n_neg", "share"])?;
        for c in &self.cells {
            wtr.serialize(c)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_diffs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(["school", "year", "diff_pp"])?;
        for d in &self.diffs {
            wtr.serialize(d)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact counts and shares per (school, year) and within-school differences
/// against `base_year` in percentage points.
pub fn negative_share(predictions: &[Prediction], base_year: i32) -> NegativeShareTable {
    let mut counts: BTreeMap<(&str, i32), (usize, usize)> = BTreeMap::new();
    for p in predictions {
        let e = counts.entry((p.school_id.as_str(), p.year)).or_default();
        e.0 += 1;
        e.1 += p.is_negative() as usize;
    }
    let cells: Vec<ShareCell> = counts
        .iter()
        .map(|(&(school, year), &(n, n_neg))| ShareCell {
            school: school.to_string(),
            year,
            n,
            n_neg,
            share: n_neg as f64 / n as f64,
        })
        .collect();

    let mut diffs = Vec::new();
    let mut missing_baseline = Vec::new();
    let schools: BTreeSet<&str> = counts.keys().map(|(s, _)| *s).collect();
    for school in schools {
        let base = cells
            .iter()
            .find(|c| c.school == school && c.year == base_year);
        if base.is_none() {
            missing_baseline.push(school.to_string());
        }
        for c in cells
            .iter()
            .filter(|c| c.school == school && c.year != base_year)
        {
            diffs.push(ShareDiff {
                school: school.to_string(),
                year: c.year,
                diff_pp: base.map(|b| 100.0 * (c.share - b.share)),
            });
        }
    }
    NegativeShareTable {
        base_year,
        cells,
        diffs,
        missing_baseline,
    }
}
