#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, Normal};
use sentiment_trend::embeddings::EmbeddingMatrix;

pub const REGIONS: [&str; 4] = ["Midwest", "West", "South", "Northeast"];
pub const CCHIE: [&str; 3] = ["R1", "R2", "Baccalaureate"];

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sentrend"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

pub fn utc(y: i64, m: i64, d: i64) -> i64 {
    days_from_civil(y, m, d) * 86_400 + 12 * 3600
}

/// A synthetic study: `schools` schools, four years, `per_year` messages per
/// school-year inside August to November, with reply threads, embeddings that
/// carry the label, upstream probabilities, labels for four rows in five,
/// complete covariates and coordinates.
pub struct Dataset {
    pub dir: PathBuf,
    pub messages: usize,
    pub tombstones: usize,
}

impl Dataset {
    pub fn generate(dir: &Path, schools: usize, per_year: usize, seed: u64) -> Self {
        std::fs::create_dir_all(dir).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let (mut comments, mut labels, mut probs) = (
            String::new(),
            String::from("msg_id,label\n"),
            String::from("msg_id,p_negative\n"),
        );
        let mut ids = Vec::new();
        let mut emb = Vec::new();
        let mut cov = String::from(
            "school_id,region,type,d1,cchie,medical,city_population,doctoral_programs,tenure,enrollment,graduate_student,selectivity,graduation_rate\n",
        );
        let mut coords = String::from("school_id,lat,lon\n");
        let mut tombstones = 0;
        for s in 0..schools {
            let school = format!("s{s:02}");
            let u: f64 = noise.sample(&mut rng) * 0.4;
            writeln!(
                cov,
                "{school},{},{},{},{},{},{:.1},{},{},{:.1},{:.1},{:.2},{}",
                REGIONS[s % 4],
                if s % 3 == 0 { "Private" } else { "Public" },
                if rng.random_bool(0.5) { "Yes" } else { "No" },
                CCHIE[(s / 2) % 3],
                if rng.random_bool(0.4) { "Yes" } else { "No" },
                rng.random_range(50.0..2000.0),
                rng.random_range(0..120),
                rng.random_range(100..2000),
                rng.random_range(1.0..50.0),
                rng.random_range(0.1..15.0),
                rng.random_range(0.05..0.9),
                rng.random_range(50..98),
            )
            .unwrap();
            writeln!(
                coords,
                "{school},{:.2},{:.2}",
                rng.random_range(26.0..48.0),
                rng.random_range(-122.0..-70.0)
            )
            .unwrap();
            for (yi, year) in (2019..=2022).enumerate() {
                let mut local: Vec<String> = Vec::new();
                for k in 0..per_year {
                    let id = format!("{school}-{year}-{k:03}");
                    let parent = if k > 0 && rng.random_bool(0.6) {
                        Some(local[rng.random_range(0..local.len())].clone())
                    } else {
                        None
                    };
                    let eta = -0.6 + 0.2 * yi as f64 + u;
                    let negative = rng.random_bool(1.0 / (1.0 + (-eta).exp()));
                    let body = if s == 0 && year == 2020 && k == 1 {
                        tombstones += 1;
                        "[deleted]".to_string()
                    } else {
                        format!("message {id}")
                    };
                    let month = 8 + (k % 4) as i64;
                    let day = 1 + (k % 27) as i64;
                    let rec = serde_json::json!({
                        "msg_id": id,
                        "school_id": school,
                        "parent_id": parent,
                        "created_utc": utc(year, month, day),
                        "body": body,
                        "author_dummy": rng.random_range(1..50u64),
                    });
                    writeln!(comments, "{rec}").unwrap();
                    let sign = if negative { 1.0 } else { -1.0 };
                    for d in 0..4 {
                        let mean = if d < 2 { 0.8 * sign } else { 0.0 };
                        emb.push((mean + noise.sample(&mut rng)) as f32);
                    }
                    let z = 1.2 * sign + noise.sample(&mut rng);
                    writeln!(probs, "{id},{:.6}", 1.0 / (1.0 + (-z).exp())).unwrap();
                    if rng.random_range(0..5) != 0 {
                        writeln!(labels, "{id},{}", negative as u8).unwrap();
                    }
                    ids.push(id.clone());
                    local.push(id);
                }
            }
        }
        // A comment outside the window.
        writeln!(
            comments,
            "{}",
            serde_json::json!({"msg_id": "s00-dec", "school_id": "s00", "parent_id": null, "created_utc": utc(2020, 12, 5), "body": "late"})
        )
        .unwrap();
        ids.push("s00-dec".into());
        emb.extend([0.0f32; 4]);
        writeln!(probs, "s00-dec,0.5").unwrap();

        std::fs::write(dir.join("comments.jsonl"), comments).unwrap();
        std::fs::write(dir.join("labels.csv"), labels).unwrap();
        std::fs::write(dir.join("covariates.csv"), cov).unwrap();
        std::fs::write(dir.join("coords.csv"), coords).unwrap();
        std::fs::write(dir.join("emb.probs.csv"), probs).unwrap();
        let m = EmbeddingMatrix::new(ids, 4, emb).unwrap();
        let mut data = Vec::new();
        m.write(&mut data).unwrap();
        std::fs::write(dir.join("emb.emb"), data).unwrap();
        let mut manifest = Vec::new();
        m.write_manifest(&mut manifest).unwrap();
        std::fs::write(dir.join("emb.ids"), manifest).unwrap();
        Dataset {
            dir: dir.to_path_buf(),
            messages: schools * 4 * per_year,
            tombstones,
        }
    }

    /// Configuration with relative input paths, written next to the data.
    pub fn config(&self, extra: &str) -> PathBuf {
        let text = format!(
            r#"rng_seed = 5
jobs = 2
[inputs]
comments = "comments.jsonl"
covariates = "covariates.csv"
embeddings = "emb"
coordinates = "coords.csv"
labels = "labels.csv"
[sample]
cap = 40
seed_batch = 5
[gat]
max_epochs = 40
{extra}
"#
        );
        let path = self.dir.join("pipeline.toml");
        std::fs::write(&path, text).unwrap();
        path
    }
}

/// Every file under `root`, as (relative path, bytes), sorted.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
