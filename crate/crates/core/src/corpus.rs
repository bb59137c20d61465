//! Comment ingestion, the study window, and school-level covariates.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Platform placeholders left behind when a comment is deleted or moderated.
pub const TOMBSTONES: [&str; 2] = ["[deleted]", "[removed]"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawComment {
    pub msg_id: String,
    pub school_id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub created_utc: i64,
    pub body: String,
    #[serde(default)]
    pub author_dummy: Option<u64>,
}

impl RawComment {
    pub fn is_tombstone(&self) -> bool {
        TOMBSTONES.contains(&self.body.as_str())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.msg_id.is_empty() {
            return Err("empty msg_id".into());
        }
        if self.school_id.is_empty() {
            return Err("empty school_id".into());
        }
        if self.parent_id.as_deref() == Some(self.msg_id.as_str()) {
            return Err(format!("msg_id {:?} lists itself as parent", self.msg_id));
        }
        if self.author_dummy == Some(0) {
            return Err("author_dummy must be >= 1".into());
        }
        Ok(())
    }

    /// (year, month) of the UTC calendar date.
    pub fn year_month(&self) -> Option<(i32, u32)> {
        DateTime::from_timestamp(self.created_utc, 0).map(|t| (t.year(), t.month()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMalformed {
    #[default]
    Abort,
    Skip,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedComments {
    /// In input order; the position is the appearance index.
    pub comments: Vec<RawComment>,
    /// (line number, reason) for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Parses line-delimited JSON comment records. Blank lines are ignored.
pub fn parse_comments<R: BufRead>(reader: R, on_malformed: OnMalformed) -> Result<ParsedComments> {
    let mut out = ParsedComments::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawComment>(&line)
            .map_err(|e| e.to_string())
            .and_then(|c| c.validate().map(|_| c));
        match parsed {
            Ok(c) => {
                if !seen.insert(c.msg_id.clone()) {
                    return Err(Error::DuplicateId(c.msg_id));
                }
                out.comments.push(c);
            }
            Err(message) => match on_malformed {
                OnMalformed::Abort => {
                    return Err(Error::Record {
                        line: line_no,
                        message,
                    })
                }
                OnMalformed::Skip => out.skipped.push((line_no, message)),
            },
        }
    }
    Ok(out)
}

pub fn write_comments<'a, W: Write>(
    mut writer: W,
    comments: impl IntoIterator<Item = &'a RawComment>,
) -> Result<()> {
    for c in comments {
        serde_json::to_writer(&mut writer, c)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub years: BTreeSet<i32>,
    pub months: BTreeSet<u32>,
}

impl Window {
    pub fn new(
        years: impl IntoIterator<Item = i32>,
        months: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let w = Self {
            years: years.into_iter().collect(),
            months: months.into_iter().collect(),
        };
        w.validate()?;
        Ok(w)
    }

    /// August through November of 2019-2022.
    pub fn study() -> Self {
        Self {
            years: (2019..=2022).collect(),
            months: (8..=11).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.months.is_empty() {
            return Err(Error::Config("window months must be non-empty".into()));
        }
        if let Some(m) = self.months.iter().find(|m| !(1..=12).contains(*m)) {
            return Err(Error::Config(format!("month {m} outside 1..12")));
        }
        Ok(())
    }

    pub fn contains(&self, c: &RawComment) -> Option<i32> {
        let (y, m) = c.year_month()?;
        (self.years.contains(&y) && self.months.contains(&m)).then_some(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(flatten)]
    pub comment: RawComment,
    pub year: i32,
}

/// Windowed, year-labelled messages. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    window: Window,
    messages: Vec<Message>,
    by_school: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn schools(&self) -> impl Iterator<Item = &str> {
        self.by_school.keys().map(String::as_str)
    }

    /// Messages of one school, in appearance order.
    pub fn school(&self, school_id: &str) -> Option<impl Iterator<Item = &Message>> {
        self.by_school
            .get(school_id)
            .map(|idx| idx.iter().map(|&i| &self.messages[i]))
    }

    pub fn school_counts(&self) -> BTreeMap<&str, usize> {
        self.by_school
            .iter()
            .map(|(k, v)| (k.as_str(), v.len()))
            .collect()
    }

    pub fn comments(&self) -> impl Iterator<Item = &RawComment> {
        self.messages.iter().map(|m| &m.comment)
    }
}

/// Keeps the comments whose UTC calendar month and year fall in the window.
pub fn filter_window<I>(comments: I, window: &Window) -> Corpus
where
    I: IntoIterator<Item = RawComment>,
{
    let mut messages = Vec::new();
    let mut by_school: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for c in comments {
        if let Some(year) = window.contains(&c) {
            by_school
                .entry(c.school_id.clone())
                .or_default()
                .push(messages.len());
            messages.push(Message { comment: c, year });
        }
    }
    Corpus {
        window: window.clone(),
        messages,
        by_school,
    }
}

/// Writes the corpus as JSONL with the derived year appended to each record.
pub fn write_corpus<W: Write>(mut writer: W, corpus: &Corpus) -> Result<()> {
    for m in &corpus.messages {
        serde_json::to_writer(&mut writer, m)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(reader: R, window: &Window) -> Result<Corpus> {
    let parsed = parse_comments(reader, OnMalformed::Abort)?;
    Ok(filter_window(parsed.comments, window))
}

macro_rules! categorical {
    ($name:ident { $($variant:ident => [$($lit:literal),+]),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => stringify!($variant)),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let key = s.trim().to_ascii_lowercase();
                $(
                    if key == stringify!($variant).to_ascii_lowercase() $(|| key == $lit)+ {
                        return Ok($name::$variant);
                    }
                )+
                Err(format!("unknown {} level {:?}", stringify!($name), s))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

categorical!(Region {
    West => ["w"],
    South => ["s"],
    Northeast => ["ne", "north east", "northwest"],
    Midwest => ["mw", "mid west"],
});

categorical!(SchoolType {
    Public => ["pub"],
    Private => ["priv", "private not-for-profit"],
});

// Baccalaureate and Master's share one level.
categorical!(Cchie {
    BaccalaureateOrMasters => ["baccalaureate", "masters", "master's", "baccalaureate or master's", "baccalaureate/master's"],
    DoctoralHigh => ["r2", "doctoral: high research activity", "doctoral high"],
    DoctoralVeryHigh => ["r1", "doctoral: very high research activity", "doctoral very high"],
});

pub const COVARIATE_HEADER: [&str; 13] = [
    "school_id",
    "region",
    "type",
    "d1",
    "cchie",
    "medical",
    "city_population",
    "doctoral_programs",
    "tenure",
    "enrollment",
    "graduate_student",
    "selectivity",
    "graduation_rate",
];

/// Numeric covariates, in header order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericCovariate {
    CityPopulation,
    DoctoralPrograms,
    Tenure,
    Enrollment,
    GraduateStudent,
    Selectivity,
    GraduationRate,
}

impl NumericCovariate {
    pub const ALL: [NumericCovariate; 7] = [
        NumericCovariate::CityPopulation,
        NumericCovariate::DoctoralPrograms,
        NumericCovariate::Tenure,
        NumericCovariate::Enrollment,
        NumericCovariate::GraduateStudent,
        NumericCovariate::Selectivity,
        NumericCovariate::GraduationRate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NumericCovariate::CityPopulation => "city_population",
            NumericCovariate::DoctoralPrograms => "doctoral_programs",
            NumericCovariate::Tenure => "tenure",
            NumericCovariate::Enrollment => "enrollment",
            NumericCovariate::GraduateStudent => "graduate_student",
            NumericCovariate::Selectivity => "selectivity",
            NumericCovariate::GraduationRate => "graduation_rate",
        }
    }
}

/// One school's row. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolCovariates {
    pub school_id: String,
    pub region: Option<Region>,
    pub school_type: Option<SchoolType>,
    pub d1: Option<bool>,
    pub cchie: Option<Cchie>,
    pub medical: Option<bool>,
    pub city_population: Option<f64>,
    pub doctoral_programs: Option<f64>,
    pub tenure: Option<f64>,
    pub enrollment: Option<f64>,
    pub graduate_student: Option<f64>,
    pub selectivity: Option<f64>,
    pub graduation_rate: Option<f64>,
}

impl SchoolCovariates {
    pub fn numeric(&self, which: NumericCovariate) -> Option<f64> {
        match which {
            NumericCovariate::CityPopulation => self.city_population,
            NumericCovariate::DoctoralPrograms => self.doctoral_programs,
            NumericCovariate::Tenure => self.tenure,
            NumericCovariate::Enrollment => self.enrollment,
            NumericCovariate::GraduateStudent => self.graduate_student,
            NumericCovariate::Selectivity => self.selectivity,
            NumericCovariate::GraduationRate => self.graduation_rate,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.region.is_some()
            && self.school_type.is_some()
            && self.d1.is_some()
            && self.cchie.is_some()
            && self.medical.is_some()
            && NumericCovariate::ALL
                .iter()
                .all(|&c| self.numeric(c).is_some())
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" | "y" | "true" | "1" => Ok(true),
        "no" | "n" | "false" | "0" => Ok(false),
        _ => Err(format!("expected yes/no, got {s:?}")),
    }
}

/// Reads `msg_id,label` rows (1 = negative) into a map.
pub fn read_labels<R: Read>(reader: R) -> Result<BTreeMap<String, bool>> {
    #[derive(Deserialize)]
    struct Row {
        msg_id: String,
        label: u8,
    }
    let mut out = BTreeMap::new();
    for (i, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let row: Row = row?;
        let label = match row.label {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Field {
                    row: i + 2,
                    column: "label".into(),
                    message: format!("expected 0 or 1, got {v}"),
                })
            }
        };
        if out.insert(row.msg_id.clone(), label).is_some() {
            return Err(Error::DuplicateId(row.msg_id));
        }
    }
    Ok(out)
}

pub fn load_covariates<R: Read>(reader: R) -> Result<Vec<SchoolCovariates>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != COVARIATE_HEADER {
        return Err(Error::Invalid(format!(
            "covariate header {:?} does not match expected {:?}",
            header, COVARIATE_HEADER
        )));
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let row = i + 2;
        let cell = |col: usize| -> Option<&str> {
            rec.get(col)
                .map(str::trim)
                .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("na"))
        };
        let field_err = |col: usize, message: String| Error::Field {
            row,
            column: COVARIATE_HEADER[col].to_string(),
            message,
        };
        let parse_cat = |col: usize| -> Result<Option<String>> { Ok(cell(col).map(str::to_owned)) };
        fn lift<T>(
            v: Option<std::result::Result<T, String>>,
        ) -> std::result::Result<Option<T>, String> {
            v.transpose()
        }

        let school_id = cell(0)
            .ok_or_else(|| field_err(0, "missing school_id".into()))?
            .to_string();
        if !ids.insert(school_id.clone()) {
            return Err(field_err(0, format!("duplicate school_id {school_id:?}")));
        }
        let region =
            lift(parse_cat(1)?.map(|s| s.parse::<Region>())).map_err(|m| field_err(1, m))?;
        let school_type =
            lift(parse_cat(2)?.map(|s| s.parse::<SchoolType>())).map_err(|m| field_err(2, m))?;
        let d1 = lift(cell(3).map(parse_bool)).map_err(|m| field_err(3, m))?;
        let cchie = lift(parse_cat(4)?.map(|s| s.parse::<Cchie>())).map_err(|m| field_err(4, m))?;
        let medical = lift(cell(5).map(parse_bool)).map_err(|m| field_err(5, m))?;

        let mut nums = [None; 7];
        for (k, slot) in nums.iter_mut().enumerate() {
            let col = 6 + k;
            if let Some(s) = cell(col) {
                let v: f64 = s
                    .parse()
                    .map_err(|_| field_err(col, format!("not a number: {s:?}")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(field_err(col, format!("must be finite and >= 0, got {v}")));
                }
                *slot = Some(v);
            }
        }
        if let Some(s) = nums[5] {
            if s > 1.0 {
                return Err(field_err(11, format!("selectivity {s} outside [0, 1]")));
            }
        }
        if let Some(g) = nums[6] {
            if g > 100.0 {
                return Err(field_err(
                    12,
                    format!("graduation_rate {g} outside [0, 100]"),
                ));
            }
        }
        out.push(SchoolCovariates {
            school_id,
            region,
            school_type,
            d1,
            cchie,
            medical,
            city_population: nums[0],
            doctoral_programs: nums[1],
            tenure: nums[2],
            enrollment: nums[3],
            graduate_student: nums[4],
            selectivity: nums[5],
            graduation_rate: nums[6],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSummary {
    pub variable: String,
    pub levels: Vec<LevelCount>,
}

/// `sd` is `None` when fewer than two values are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub variable: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTable {
    pub schools: usize,
    pub complete: usize,
    pub categorical: Vec<CategoricalSummary>,
    pub numeric: Vec<NumericSummary>,
}

fn summarize_levels<T: Copy + Eq + fmt::Display>(
    variable: &str,
    levels: &[T],
    values: impl Iterator<Item = Option<T>>,
) -> CategoricalSummary {
    let present: Vec<T> = values.flatten().collect();
    let n = present.len();
    let levels = levels
        .iter()
        .map(|lvl| {
            let count = present.iter().filter(|v| *v == lvl).count();
            LevelCount {
                level: lvl.to_string(),
                count,
                percent: if n == 0 {
                    0.0
                } else {
                    100.0 * count as f64 / n as f64
                },
            }
        })
        .collect();
    CategoricalSummary {
        variable: variable.to_string(),
        levels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct YesNo(bool);

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0 { "Yes" } else { "No" })
    }
}

pub fn numeric_summary(variable: &str, values: &[f64]) -> NumericSummary {
    let n = values.len();
    if n == 0 {
        return NumericSummary {
            variable: variable.into(),
            n,
            mean: None,
            sd: None,
            min: None,
            max: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    NumericSummary {
        variable: variable.into(),
        n,
        mean: Some(mean),
        sd,
        min: values.iter().copied().reduce(f64::min),
        max: values.iter().copied().reduce(f64::max),
    }
}

/// Counts and percentages for categorical fields; mean, sample SD, min, max
/// for numeric fields. Each variable uses the rows where it is present.
pub fn descriptive_stats(covariates: &[SchoolCovariates]) -> DescriptiveTable {
    let bools = [YesNo(false), YesNo(true)];
    let categorical = vec![
        summarize_levels("region", Region::ALL, covariates.iter().map(|c| c.region)),
        summarize_levels(
            "type",
            SchoolType::ALL,
            covariates.iter().map(|c| c.school_type),
        ),
        summarize_levels("d1", &bools, covariates.iter().map(|c| c.d1.map(YesNo))),
        summarize_levels("cchie", Cchie::ALL, covariates.iter().map(|c| c.cchie)),
        summarize_levels(
            "medical",
            &bools,
            covariates.iter().map(|c| c.medical.map(YesNo)),
        ),
    ];
    let numeric = NumericCovariate::ALL
        .iter()
        .map(|&var| {
            let vals: Vec<f64> = covariates.iter().filter_map(|c| c.numeric(var)).collect();
            numeric_summary(var.name(), &vals)
        })
        .collect();
    DescriptiveTable {
        schools: covariates.len(),
        complete: covariates.iter().filter(|c| c.is_complete()).count(),
        categorical,
        numeric,
    }
}
