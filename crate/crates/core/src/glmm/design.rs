use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Range;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::corpus::{Cchie, NumericCovariate, Region, SchoolCovariates, SchoolType};
use crate::error::{Error, Result};
use crate::stacker::Prediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnKind {
    Intercept,
    Dummy {
        variable: String,
        level: String,
        reference: String,
    },
    /// Stored value is `(raw - mean) / sd`.
    Numeric {
        mean: f64,
        sd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Response, fixed effects, and cluster membership for the random-intercept
/// logistic model. Rows are stored grouped by cluster; `weight` is a
/// frequency weight so identical rows can be collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmmDesign {
    columns: Vec<Column>,
    cluster_ids: Vec<String>,
    y: Vec<f64>,
    weight: Vec<f64>,
    /// Row-major, `rows x columns.len()`.
    x: Vec<f64>,
    cluster: Vec<usize>,
    ranges: Vec<Range<usize>>,
}

impl GlmmDesign {
    /// `x` is row-major with one entry per column; `cluster[i]` indexes `cluster_ids`.
    pub fn new(
        columns: Vec<Column>,
        cluster_ids: Vec<String>,
        y: Vec<f64>,
        x: Vec<f64>,
        cluster: Vec<usize>,
        weight: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        let p = columns.len();
        let weight = weight.unwrap_or_else(|| vec![1.0; n]);
        if x.len() != n * p || cluster.len() != n || weight.len() != n {
            return Err(Error::Shape(format!(
                "design with {n} responses needs {} x values, {n} cluster ids and {n} weights",
                n * p
            )));
        }
        if let Some(&k) = cluster.iter().find(|&&k| k >= cluster_ids.len()) {
            return Err(Error::Shape(format!("cluster index {k} without an id")));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid("responses must be 0 or 1".into()));
        }
        if weight.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Invalid("row weights must be positive".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| cluster[i]);
        let mut ranges = vec![0..0; cluster_ids.len()];
        let mut start = 0;
        while start < n {
            let k = cluster[order[start]];
            let mut end = start;
            while end < n && cluster[order[end]] == k {
                end += 1;
            }
            ranges[k] = start..end;
            start = end;
        }
        Ok(Self {
            y: order.iter().map(|&i| y[i]).collect(),
            weight: order.iter().map(|&i| weight[i]).collect(),
            x: order
                .iter()
                .flat_map(|&i| x[i * p..(i + 1) * p].iter().copied())
                .collect(),
            cluster: order.iter().map(|&i| cluster[i]).collect(),
            columns,
            cluster_ids,
            ranges,
        })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn nclusters(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster[i]
    }

    pub fn cluster_rows(&self, k: usize) -> Range<usize> {
        self.ranges[k].clone()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let p = self.ncols();
        (0..self.rows()).map(move |i| self.x[i * p + j])
    }

    pub fn x_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows(), self.ncols(), &self.x)
    }

    /// Total frequency weight (number of original messages).
    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Merges rows with identical cluster, covariates, and response.
    pub fn compress(&self) -> Self {
        let p = self.ncols();
        let mut merged: BTreeMap<(usize, Vec<u64>, u64), f64> = BTreeMap::new();
        for i in 0..self.rows() {
            let key = (
                self.cluster[i],
                self.row(i).iter().map(|v| v.to_bits()).collect(),
                self.y[i].to_bits(),
            );
            *merged.entry(key).or_default() += self.weight[i];
        }
        let mut y = Vec::with_capacity(merged.len());
        let mut x = Vec::with_capacity(merged.len() * p);
        let mut cluster = Vec::with_capacity(merged.len());
        let mut weight = Vec::with_capacity(merged.len());
        for ((k, row, yy), w) in merged {
            cluster.push(k);
            x.extend(row.into_iter().map(f64::from_bits));
            y.push(f64::from_bits(yy));
            weight.push(w);
        }
        Self::new(
            self.columns.clone(),
            self.cluster_ids.clone(),
            y,
            x,
            cluster,
            Some(weight),
        )
        .expect("compressed design keeps a valid shape")
    }

    /// Same design with column `j` multiplied by `factor`.
    pub fn rescale_column(&self, j: usize, factor: f64) -> Self {
        let mut out = self.clone();
        let p = self.ncols();
        for i in 0..self.rows() {
            out.x[i * p + j] *= factor;
        }
        out
    }

    /// Same design with clusters renumbered: new cluster `perm[k]` is old cluster `k`.
    pub fn relabel_clusters(&self, perm: &[usize]) -> Result<Self> {
        let mut ids = vec![String::new(); self.nclusters()];
        for (k, &to) in perm.iter().enumerate() {
            ids[to] = self.cluster_ids[k].clone();
        }
        let cluster = self.cluster.iter().map(|&k| perm[k]).collect();
        Self::new(
            self.columns.clone(),
            ids,
            self.y.clone(),
            self.x.clone(),
            cluster,
            Some(self.weight.clone()),
        )
    }
}

const MAGIC: &[u8; 8] = b"GLMMDSN1";

#[derive(Serialize, Deserialize)]
struct FileHeader {
    rows: usize,
    columns: Vec<Column>,
    cluster_ids: Vec<String>,
    layout: Vec<String>,
}

impl GlmmDesign {
    /// Gzip-compressed columnar file: magic, JSON header length (u64 LE), the
    /// JSON header, then `y`, `weight` (f64 LE), `cluster` (u32 LE), and each
    /// design column (f64 LE) in header order.
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut gz = GzEncoder::new(w, Compression::default());
        let mut layout = vec!["y".to_string(), "weight".into(), "cluster".into()];
        layout.extend(self.column_names());
        let header = serde_json::to_vec(&FileHeader {
            rows: self.rows(),
            columns: self.columns.clone(),
            cluster_ids: self.cluster_ids.clone(),
            layout,
        })?;
        gz.write_all(MAGIC)?;
        gz.write_all(&(header.len() as u64).to_le_bytes())?;
        gz.write_all(&header)?;
        for v in self.y.iter().chain(&self.weight) {
            gz.write_all(&v.to_le_bytes())?;
        }
        for &k in &self.cluster {
            gz.write_all(&(k as u32).to_le_bytes())?;
        }
        for j in 0..self.ncols() {
            for v in self.column(j) {
                gz.write_all(&v.to_le_bytes())?;
            }
        }
        gz.finish()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        GzDecoder::new(r).read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Invalid(format!("design file: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: FileHeader = serde_json::from_slice(
            bytes
                .get(16..16 + hlen)
                .ok_or_else(|| bad("truncated header"))?,
        )?;
        let (n, p) = (header.rows, header.columns.len());
        let mut body = &bytes[16 + hlen..];
        if body.len() != n * 8 * 2 + n * 4 + n * p * 8 {
            return Err(bad("payload length does not match header"));
        }
        let mut take_f64 = |count: usize| -> Vec<f64> {
            let (head, rest) = body.split_at(count * 8);
            body = rest;
            head.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let y = take_f64(n);
        let weight = take_f64(n);
        let (cl, rest) = body.split_at(n * 4);
        let cluster: Vec<usize> = cl
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let cols: Vec<Vec<f64>> = rest
            .chunks_exact(n.max(1) * 8)
            .take(p)
            .map(|c| {
                c.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        let x = (0..n)
            .flat_map(|i| cols.iter().map(move |c| c[i]))
            .collect();
        Self::new(
            header.columns,
            header.cluster_ids,
            y,
            x,
            cluster,
            Some(weight),
        )
    }
}

/// Reference level of each categorical covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceLevels {
    pub region: Region,
    pub school_type: SchoolType,
    pub year: i32,
    pub d1: bool,
    pub cchie: Cchie,
    pub medical: bool,
}

impl Default for ReferenceLevels {
    fn default() -> Self {
        Self {
            region: Region::Midwest,
            school_type: SchoolType::Public,
            year: 2019,
            d1: false,
            cchie: Cchie::BaccalaureateOrMasters,
            medical: false,
        }
    }
}

impl ReferenceLevels {
    /// Parses `variable -> level` pairs; unnamed variables keep their default.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut out = Self::default();
        for (var, level) in pairs {
            let bad = |m: String| Error::Config(format!("reference level for {var}: {m}"));
            let yes_no = |s: &str| match s.to_ascii_lowercase().as_str() {
                "yes" | "true" => Ok(true),
                "no" | "false" => Ok(false),
                _ => Err(bad(format!("unknown level {s:?}"))),
            };
            match var {
                "region" => out.region = level.parse().map_err(bad)?,
                "type" | "school_type" => out.school_type = level.parse().map_err(bad)?,
                "cchie" => out.cchie = level.parse().map_err(bad)?,
                "year" => {
                    out.year = level
                        .parse()
                        .map_err(|_| bad(format!("unknown level {level:?}")))?
                }
                "d1" => out.d1 = yes_no(level)?,
                "medical" => out.medical = yes_no(level)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown categorical variable {var:?}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

/// Dummy-codes the categorical covariates against `refs`, standardizes the
/// numeric covariates by their mean and sample SD across the schools that
/// enter the model, and attaches one response per classified message.
/// Messages from schools without complete covariates are dropped.
pub fn build_design(
    predictions: &[Prediction],
    covariates: &[SchoolCovariates],
    refs: &ReferenceLevels,
) -> Result<GlmmDesign> {
    let by_id: HashMap<&str, &SchoolCovariates> = covariates
        .iter()
        .filter(|c| c.is_complete())
        .map(|c| (c.school_id.as_str(), c))
        .collect();
    let kept: Vec<&Prediction> = predictions
        .iter()
        .filter(|p| by_id.contains_key(p.school_id.as_str()))
        .collect();
    let dropped = predictions.len() - kept.len();
    if dropped > 0 {
        log::info!("{dropped} messages dropped: school covariates missing or incomplete");
    }

    let schools: BTreeSet<&str> = kept.iter().map(|p| p.school_id.as_str()).collect();
    if schools.len() < 2 {
        return Err(Error::Invalid(format!(
            "mixed model needs at least 2 clusters, found {}",
            schools.len()
        )));
    }
    let cluster_ids: Vec<String> = schools.iter().map(|s| s.to_string()).collect();
    let cluster_index: HashMap<&str, usize> =
        schools.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let years: BTreeSet<i32> = kept.iter().map(|p| p.year).collect();
    if !years.contains(&refs.year) {
        return Err(Error::Config(format!(
            "reference year {} does not occur in the data (years: {:?})",
            refs.year, years
        )));
    }

    let mut columns = vec![Column {
        name: "(Intercept)".into(),
        kind: ColumnKind::Intercept,
    }];
    let dummy = |variable: &str, level: String, reference: String| Column {
        name: format!("{variable}:{level}"),
        kind: ColumnKind::Dummy {
            variable: variable.into(),
            level,
            reference,
        },
    };
    type Extract = Box<dyn Fn(&SchoolCovariates, i32) -> f64>;
    let mut extract: Vec<Extract> = vec![Box::new(|_, _| 1.0)];

    for &r in Region::ALL.iter().filter(|&&r| r != refs.region) {
        columns.push(dummy("region", r.to_string(), refs.region.to_string()));
        extract.push(Box::new(move |c, _| (c.region == Some(r)) as u8 as f64));
    }
    for &t in SchoolType::ALL.iter().filter(|&&t| t != refs.school_type) {
        columns.push(dummy("type", t.to_string(), refs.school_type.to_string()));
        extract.push(Box::new(move |c, _| {
            (c.school_type == Some(t)) as u8 as f64
        }));
    }
    for &y in years.iter().filter(|&&y| y != refs.year) {
        columns.push(dummy("year", y.to_string(), refs.year.to_string()));
        extract.push(Box::new(move |_, year| (year == y) as u8 as f64));
    }
    let d1 = !refs.d1;
    columns.push(dummy("d1", yes_no(d1).into(), yes_no(refs.d1).into()));
    extract.push(Box::new(move |c, _| (c.d1 == Some(d1)) as u8 as f64));
    for &l in Cchie::ALL.iter().filter(|&&l| l != refs.cchie) {
        columns.push(dummy("cchie", l.to_string(), refs.cchie.to_string()));
        extract.push(Box::new(move |c, _| (c.cchie == Some(l)) as u8 as f64));
    }
    let med = !refs.medical;
    columns.push(dummy(
        "medical",
        yes_no(med).into(),
        yes_no(refs.medical).into(),
    ));
    extract.push(Box::new(move |c, _| (c.medical == Some(med)) as u8 as f64));

    for var in NumericCovariate::ALL {
        let values: Vec<f64> = schools
            .iter()
            .map(|s| by_id[s].numeric(var).unwrap())
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        columns.push(Column {
            name: var.name().into(),
            kind: ColumnKind::Numeric { mean, sd },
        });
        extract.push(Box::new(move |c, _| {
            let v = c.numeric(var).unwrap();
            if sd > 0.0 {
                (v - mean) / sd
            } else {
                0.0
            }
        }));
    }

    let p = columns.len();
    let mut x = Vec::with_capacity(kept.len() * p);
    let mut y = Vec::with_capacity(kept.len());
    let mut cluster = Vec::with_capacity(kept.len());
    for pred in &kept {
        let cov = by_id[pred.school_id.as_str()];
        x.extend(extract.iter().map(|f| f(cov, pred.year)));
        y.push(pred.is_negative() as u8 as f64);
        cluster.push(cluster_index[pred.school_id.as_str()]);
    }
    GlmmDesign::new(columns, cluster_ids, y, x, cluster, None)
}
