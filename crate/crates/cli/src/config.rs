use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sentiment_trend::corpus::{OnMalformed, Window};
use sentiment_trend::gat::GatConfig;
use sentiment_trend::glmm::{GlmmOptions, ReferenceLevels};
use sentiment_trend::report::Projection;
use sentiment_trend::stacker::Transform;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub rng_seed: u64,
    pub jobs: usize,
    pub inputs: Inputs,
    pub window: WindowSection,
    pub ingest: IngestSection,
    pub sample: SampleSection,
    pub gat: GatSection,
    pub stack: StackSection,
    pub glmm: GlmmSection,
    pub report: ReportSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            rng_seed: 0,
            jobs: 1,
            inputs: Inputs::default(),
            window: WindowSection::default(),
            ingest: IngestSection::default(),
            sample: SampleSection::default(),
            gat: GatSection::default(),
            stack: StackSection::default(),
            glmm: GlmmSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub comments: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Exporter output prefix: `<prefix>.emb`, `<prefix>.ids`,
    /// `<prefix>.probs.csv`, and optionally `<prefix>.manifest.json`.
    pub embeddings: Option<PathBuf>,
    pub coordinates: Option<PathBuf>,
    /// `msg_id,label` rows used to train the GAT and the stacker when no
    /// fitted model is configured.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub years: Vec<i32>,
    pub months: Vec<u32>,
}

impl Default for WindowSection {
    fn default() -> Self {
        let w = Window::study();
        Self {
            years: w.years.into_iter().collect(),
            months: w.months.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub on_malformed: OnMalformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub cap: usize,
    pub seed_batch: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            cap: 30_000,
            seed_batch: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatSection {
    /// Fitted parameters; when absent the network is trained from the labels.
    pub params: Option<PathBuf>,
    #[serde(flatten)]
    pub config: GatConfig,
    #[serde(flatten, skip_serializing)]
    pub unknown: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackSection {
    /// Fitted model; when absent it is trained from the labels.
    pub model: Option<PathBuf>,
    pub transform: Transform,
    pub threshold: f64,
    /// Leave "[deleted]" / "[removed]" bodies out of the predictions.
    pub exclude_tombstones: bool,
}

impl Default for StackSection {
    fn default() -> Self {
        Self {
            model: None,
            transform: Transform::Logit,
            threshold: 0.5,
            exclude_tombstones: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmmSection {
    pub reference: ReferenceLevels,
    #[serde(flatten)]
    pub options: GlmmOptions,
    #[serde(flatten, skip_serializing)]
    pub unknown: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub projection: Projection,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub years: Option<Vec<i32>>,
    pub months: Option<Vec<u32>>,
    pub cap: Option<usize>,
    pub seed_batch: Option<usize>,
    pub rng_seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    /// Reads the TOML file (relative paths inside it resolve against its
    /// directory) and applies the overrides.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self, Failure> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Failure::Validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                let mut cfg: Self = toml::from_str(&text)
                    .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.resolve_paths(base);
                cfg
            }
            None => Self::default(),
        };
        if let Some(v) = &overrides.years {
            cfg.window.years = v.clone();
        }
        if let Some(v) = &overrides.months {
            cfg.window.months = v.clone();
        }
        if let Some(v) = overrides.cap {
            cfg.sample.cap = v;
        }
        if let Some(v) = overrides.seed_batch {
            cfg.sample.seed_batch = v;
        }
        if let Some(v) = overrides.rng_seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = overrides.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = &overrides.out {
            cfg.out = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [
            &mut self.inputs.comments,
            &mut self.inputs.covariates,
            &mut self.inputs.embeddings,
            &mut self.inputs.coordinates,
            &mut self.inputs.labels,
            &mut self.gat.params,
            &mut self.stack.model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Validation(m));
        for (section, keys) in [("gat", &self.gat.unknown), ("glmm", &self.glmm.unknown)] {
            if let Some(key) = keys.keys().next() {
                return bad(format!("unknown field `{key}` in [{section}]"));
            }
        }
        self.window()
            .map_err(|e| Failure::Validation(e.to_string()))?;
        if self.sample.seed_batch == 0 {
            return bad("sample.seed_batch must be >= 1".into());
        }
        if self.sample.cap < self.sample.seed_batch {
            return bad(format!(
                "sample.cap ({}) must be >= sample.seed_batch ({})",
                self.sample.cap, self.sample.seed_batch
            ));
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        if !(self.stack.threshold > 0.0 && self.stack.threshold < 1.0) {
            return bad(format!(
                "stack.threshold {} outside (0, 1)",
                self.stack.threshold
            ));
        }
        self.gat
            .config
            .validate()
            .map_err(|e| Failure::Validation(e.to_string()))?;
        self.report
            .projection
            .validate()
            .map_err(|e| Failure::Validation(e.to_string()))?;
        if self.out.as_os_str().is_empty() {
            return bad("out must be a non-empty path".into());
        }
        Ok(())
    }

    pub fn window(&self) -> sentiment_trend::Result<Window> {
        Window::new(
            self.window.years.iter().copied(),
            self.window.months.iter().copied(),
        )
    }

    /// SHA-256 of the effective configuration with the output directory
    /// blanked, so identical runs into different directories agree.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Parses "2019,2020" or "2019-2022".
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, String>
where
    T: std::str::FromStr + Copy + Into<i64> + TryFrom<i64>,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| {
            t.trim()
                .parse::<T>()
                .map_err(|_| format!("not a number: {t:?}"))
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (i64, i64) = (num(a)?.into(), num(b)?.into());
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                for v in a..=b {
                    out.push(T::try_from(v).map_err(|_| format!("{v} out of range"))?);
                }
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}
