use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::OddsRatioTable;

use super::bh::PValueSet;
use super::shares::NegativeShareTable;

/// Diverging color scale limit in percentage points.
pub const DIFF_CLAMP: f64 = 20.0;
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Projection {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub width: f64,
    pub height: f64,
    pub margin: f64,
}

impl Default for Projection {
    fn default() -> Self {
        Self {
            lon_min: -125.0,
            lon_max: -66.0,
            lat_min: 24.0,
            lat_max: 50.0,
            width: 800.0,
            height: 400.0,
            margin: 40.0,
        }
    }
}

impl Projection {
    /// Affine map to SVG coordinates, north up.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = self.margin + (lon - self.lon_min) / (self.lon_max - self.lon_min) * self.width;
        let y = self.margin + (self.lat_max - lat) / (self.lat_max - self.lat_min) * self.height;
        (x, y)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lon_max > self.lon_min
            && self.lat_max > self.lat_min
            && self.width > 0.0
            && self.height > 0.0
            && self.margin >= 0.0
            && [
                self.lon_min,
                self.lon_max,
                self.lat_min,
                self.lat_max,
                self.width,
                self.height,
                self.margin,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid map projection {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub lat: f64,
    pub lon: f64,
}

/// Reads `school_id,lat,lon`.
pub fn load_coordinates<R: Read>(r: R) -> Result<BTreeMap<String, Coordinate>> {
    #[derive(Deserialize)]
    struct Row {
        school_id: String,
        lat: f64,
        lon: f64,
    }
    let mut out = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(r);
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        if !(row.lat.is_finite() && row.lon.is_finite()) {
            return Err(Error::Field {
                row: i + 2,
                column: "lat/lon".into(),
                message: "non-finite coordinate".into(),
            });
        }
        if out
            .insert(
                row.school_id.clone(),
                Coordinate {
                    lat: row.lat,
                    lon: row.lon,
                },
            )
            .is_some()
        {
            return Err(Error::DuplicateId(row.school_id));
        }
    }
    Ok(out)
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn rgb(c: (u8, u8, u8)) -> String {
    format!("rgb({},{},{})", c.0, c.1, c.2)
}

const WHITE: (u8, u8, u8) = (247, 247, 247);
const RED: (u8, u8, u8) = (178, 24, 43);
const BLUE: (u8, u8, u8) = (33, 102, 172);

/// White to red over `[0, 1]`.
pub fn sequential_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    rgb((
        lerp(WHITE.0, RED.0, t),
        lerp(WHITE.1, RED.1, t),
        lerp(WHITE.2, RED.2, t),
    ))
}

/// Blue below zero, red above, saturating at `±DIFF_CLAMP`.
pub fn diverging_color(diff_pp: f64) -> String {
    let t = (diff_pp / DIFF_CLAMP).clamp(-1.0, 1.0);
    let end = if t < 0.0 { BLUE } else { RED };
    let t = t.abs();
    rgb((
        lerp(WHITE.0, end.0, t),
        lerp(WHITE.1, end.1, t),
        lerp(WHITE.2, end.2, t),
    ))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, attrs: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {attrs}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="11">{}</text>"#,
            escape(s)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn map_frame(proj: &Projection, title: &str) -> Svg {
    let mut svg = Svg::new(
        proj.width + 2.0 * proj.margin,
        proj.height + 2.0 * proj.margin,
    );
    let (x0, y0, x1, y1) = (
        proj.margin,
        proj.margin,
        proj.margin + proj.width,
        proj.margin + proj.height,
    );
    let axis = r#"stroke="black" stroke-width="1" class="axis""#;
    svg.line(x0, y1, x1, y1, axis);
    svg.line(x0, y0, x0, y1, axis);
    svg.text(
        proj.margin + proj.width / 2.0,
        proj.margin / 2.0,
        "middle",
        title,
    );
    svg
}

/// Map of negative share per school for one year.
pub fn heatmap_svg(
    table: &NegativeShareTable,
    year: i32,
    coords: &BTreeMap<String, Coordinate>,
    proj: &Projection,
) -> String {
    let mut svg = map_frame(proj, &format!("Negative share {year}"));
    for c in table.cells.iter().filter(|c| c.year == year) {
        if let Some(xy) = coords.get(&c.school) {
            let (x, y) = proj.project(xy.lat, xy.lon);
            let _ = writeln!(
                svg.body,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{}" stroke="black" stroke-width="0.5" data-school="{}"><title>{} {:.2}%</title></circle>"#,
                sequential_color(c.share),
                escape(&c.school),
                escape(&c.school),
                100.0 * c.share
            );
        }
    }
    svg.finish()
}

/// Map of percentage-point change against the base year; values beyond the
/// color clamp get a cross marker.
pub fn diff_svg(
    table: &NegativeShareTable,
    year: i32,
    coords: &BTreeMap<String, Coordinate>,
    proj: &Projection,
) -> String {
    let mut svg = map_frame(
        proj,
        &format!("Change in negative share {year} vs {}", table.base_year),
    );
    for d in table.diffs.iter().filter(|d| d.year == year) {
        let (Some(diff), Some(xy)) = (d.diff_pp, coords.get(&d.school)) else {
            continue;
        };
        let (x, y) = proj.project(xy.lat, xy.lon);
        let _ = writeln!(
            svg.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{}" stroke="black" stroke-width="0.5" data-school="{}"><title>{} {:+.2}</title></circle>"#,
            diverging_color(diff),
            escape(&d.school),
            escape(&d.school),
            diff
        );
        if diff.abs() > DIFF_CLAMP {
            let attrs = r#"stroke="black" stroke-width="1.5" class="beyond-clamp""#;
            svg.line(x - 4.0, y - 4.0, x + 4.0, y + 4.0, attrs);
            svg.line(x - 4.0, y + 4.0, x + 4.0, y - 4.0, attrs);
        }
    }
    svg.finish()
}

const HIST_BINS: usize = 20;

/// Per-year histograms of school-level negative share (percent) with median
/// and mean rules.
pub fn histogram_svg(table: &NegativeShareTable) -> String {
    let years: Vec<i32> = table.years().into_iter().collect();
    let (pw, ph, margin) = (300.0, 180.0, 40.0);
    let panels = years.len().max(1);
    let mut svg = Svg::new(panels as f64 * (pw + margin) + margin, ph + 2.0 * margin);
    for (i, year) in years
        .iter()
        .map(Some)
        .chain(std::iter::repeat(None))
        .take(panels)
        .enumerate()
    {
        let x0 = margin + i as f64 * (pw + margin);
        let y1 = margin + ph;
        let axis = r#"stroke="black" stroke-width="1" class="axis""#;
        svg.line(x0, y1, x0 + pw, y1, axis);
        svg.line(x0, margin, x0, y1, axis);
        svg.text(x0, y1 + 14.0, "middle", "0");
        svg.text(x0 + pw, y1 + 14.0, "middle", "100");
        let Some(&year) = year else { continue };
        svg.text(x0 + pw / 2.0, margin / 2.0, "middle", &year.to_string());
        let mut values: Vec<f64> = table
            .cells
            .iter()
            .filter(|c| c.year == year)
            .map(|c| 100.0 * c.share)
            .collect();
        if values.is_empty() {
            continue;
        }
        values.sort_by(f64::total_cmp);
        let mut bins = [0usize; HIST_BINS];
        for v in &values {
            let b = ((v / 100.0 * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            bins[b] += 1;
        }
        let top = *bins.iter().max().unwrap() as f64;
        let bw = pw / HIST_BINS as f64;
        for (b, &count) in bins.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let h = count as f64 / top * (ph - 10.0);
            let _ = writeln!(
                svg.body,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="rgb(150,150,150)" stroke="white"/>"#,
                x0 + b as f64 * bw,
                y1 - h,
                bw
            );
        }
        let n = values.len();
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };
        let mean = values.iter().sum::<f64>() / n as f64;
        let xm = |v: f64| x0 + v / 100.0 * pw;
        svg.line(
            xm(median),
            margin,
            xm(median),
            y1,
            r#"stroke="rgb(33,102,172)" stroke-width="1.5" class="median""#,
        );
        svg.line(
            xm(mean),
            margin,
            xm(mean),
            y1,
            r#"stroke="rgb(178,24,43)" stroke-width="1.5" stroke-dasharray="4 3" class="mean""#,
        );
    }
    svg.finish()
}

/// Forest plot of odds ratios on a log axis. Labels get an asterisk when the
/// adjusted p-value is below 0.05.
pub fn forest_svg(ors: &OddsRatioTable, adjusted: Option<&PValueSet>) -> String {
    let (label_w, pw, row_h, margin) = (180.0, 400.0, 18.0, 40.0);
    let n = ors.rows.len();
    let ph = (n.max(1) as f64) * row_h;
    let mut svg = Svg::new(label_w + pw + 2.0 * margin, ph + 2.0 * margin);
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    for r in &ors.rows {
        for v in [Some(r.odds_ratio), r.ci_low, r.ci_high]
            .into_iter()
            .flatten()
        {
            if v.is_finite() && v > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let (llo, lhi) = (lo.ln() - 0.1, hi.ln() + 0.1);
    let x0 = margin + label_w;
    let xs = |v: f64| x0 + (v.ln().clamp(llo, lhi) - llo) / (lhi - llo) * pw;
    let y1 = margin + ph;
    svg.line(
        x0,
        y1,
        x0 + pw,
        y1,
        r#"stroke="black" stroke-width="1" class="axis""#,
    );
    svg.line(
        xs(1.0),
        margin,
        xs(1.0),
        y1,
        r#"stroke="gray" stroke-dasharray="3 3" class="null""#,
    );
    svg.text(xs(1.0), y1 + 14.0, "middle", "1");
    for (i, r) in ors.rows.iter().enumerate() {
        let y = margin + (i as f64 + 0.5) * row_h;
        let star = adjusted
            .and_then(|a| a.get(&r.name))
            .is_some_and(|p| p < SIGNIFICANCE);
        let label = if star {
            format!("{} *", r.name)
        } else {
            r.name.clone()
        };
        svg.text(x0 - 8.0, y + 4.0, "end", &label);
        if let (Some(a), Some(b)) = (r.ci_low, r.ci_high) {
            svg.line(xs(a), y, xs(b), y, r#"stroke="black" stroke-width="1""#);
        }
        let _ = writeln!(
            svg.body,
            r#"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="black"/>"#,
            xs(r.odds_ratio) - 3.0,
            y - 3.0
        );
    }
    svg.finish()
}

/// `name,or,lo,hi,p_raw,p_adj,significant`; missing entries are blank.
pub fn write_odds_ratio_csv<W: Write>(
    ors: &OddsRatioTable,
    adjusted: Option<&PValueSet>,
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["name", "or", "lo", "hi", "p_raw", "p_adj", "significant"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &ors.rows {
        let p_adj = adjusted.and_then(|a| a.get(&r.name));
        wtr.write_record([
            r.name.clone(),
            r.odds_ratio.to_string(),
            opt(r.ci_low),
            opt(r.ci_high),
            opt(r.p_raw),
            opt(p_adj),
            p_adj.is_some_and(|p| p < SIGNIFICANCE).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmitReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes tables and figures into `dir`. Schools without coordinates are
/// left off the maps with a warning.
pub fn emit_figures(
    dir: &Path,
    shares: &NegativeShareTable,
    ors: Option<&OddsRatioTable>,
    adjusted: Option<&PValueSet>,
    coords: &BTreeMap<String, Coordinate>,
    proj: &Projection,
) -> Result<EmitReport> {
    proj.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut report = EmitReport::default();
    let put = |name: String, bytes: Vec<u8>, report: &mut EmitReport| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        report.files.push(path);
        Ok(())
    };

    let mut buf = Vec::new();
    shares.write_shares_csv(&mut buf)?;
    put("shares.csv".into(), buf, &mut report)?;
    let mut buf = Vec::new();
    shares.write_diffs_csv(&mut buf)?;
    put("diffs.csv".into(), buf, &mut report)?;

    for school in &shares.missing_baseline {
        report.warnings.push(format!(
            "school {school} has no {} messages; differences omitted",
            shares.base_year
        ));
    }
    let mut missing: Vec<&str> = shares
        .cells
        .iter()
        .map(|c| c.school.as_str())
        .filter(|s| !coords.contains_key(*s))
        .collect();
    missing.dedup();
    for school in missing {
        report.warnings.push(format!(
            "school {school} has no coordinates; omitted from maps"
        ));
    }

    for year in shares.years() {
        put(
            format!("heatmap_{year}.svg"),
            heatmap_svg(shares, year, coords, proj).into_bytes(),
            &mut report,
        )?;
        if year != shares.base_year {
            put(
                format!("diff_{year}.svg"),
                diff_svg(shares, year, coords, proj).into_bytes(),
                &mut report,
            )?;
        }
    }
    put(
        "hist.svg".into(),
        histogram_svg(shares).into_bytes(),
        &mut report,
    )?;

    let empty = OddsRatioTable { rows: Vec::new() };
    let ors = ors.unwrap_or(&empty);
    let mut buf = Vec::new();
    write_odds_ratio_csv(ors, adjusted, &mut buf)?;
    put("odds_ratios.csv".into(), buf, &mut report)?;
    put(
        "forest.svg".into(),
        forest_svg(ors, adjusted).into_bytes(),
        &mut report,
    )?;

    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(report)
}
