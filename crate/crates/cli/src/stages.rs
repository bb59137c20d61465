use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sentiment_trend::corpus::{self, Corpus, SchoolCovariates};
use sentiment_trend::embeddings::{EmbeddingMatrix, ExportManifest};
use sentiment_trend::gat::{self, GatParams, ProbSource, SentimentProbs};
use sentiment_trend::glmm::{self, OddsRatioTable};
use sentiment_trend::report::{self, PValueSet};
use sentiment_trend::stacker::{self, Prediction, StackModel, StackObservation};
use sentiment_trend::thread_graph::{build_graph, sample_capped, MessageGraph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::{check_file_stem, sha256_hex, StageRun};
use crate::{Failure, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Graph,
    Sample,
    Score,
    Stack,
    Glmm,
    Report,
    All,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::Ingest,
        Stage::Graph,
        Stage::Sample,
        Stage::Score,
        Stage::Stack,
        Stage::Glmm,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Sample => "sample",
            Stage::Score => "score",
            Stage::Stack => "stack",
            Stage::Glmm => "glmm",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<(), Failure> {
    match stage {
        Stage::All => {
            for s in Stage::PIPELINE {
                check_external_inputs(s, cfg)?;
            }
            Stage::PIPELINE.iter().try_for_each(|&s| run(s, cfg))
        }
        s => {
            check_external_inputs(s, cfg)?;
            match s {
                Stage::Ingest => ingest(cfg),
                Stage::Graph => graph(cfg),
                Stage::Sample => sample(cfg),
                Stage::Score => score(cfg),
                Stage::Stack => stack(cfg),
                Stage::Glmm => glmm_stage(cfg),
                Stage::Report => report_stage(cfg),
                Stage::All => unreachable!(),
            }
        }
    }
}

fn require<'a>(stage: Stage, what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path, Failure> {
    let p = p.as_deref().ok_or_else(|| {
        Failure::Validation(format!("stage {}: {what} is not configured", stage.name()))
    })?;
    if !p.exists() {
        return Err(Failure::Validation(format!(
            "stage {}: missing input {} ({what})",
            stage.name(),
            p.display()
        )));
    }
    Ok(p)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Inputs from outside the output directory, checked before anything is written.
fn check_external_inputs(stage: Stage, cfg: &PipelineConfig) -> Result<(), Failure> {
    let i = &cfg.inputs;
    match stage {
        Stage::Ingest => {
            require(stage, "inputs.comments", &i.comments)?;
            require(stage, "inputs.covariates", &i.covariates)?;
        }
        Stage::Score => {
            let prefix = require_prefix(stage, cfg)?;
            for suffix in [".emb", ".ids"] {
                require(
                    stage,
                    "inputs.embeddings",
                    &Some(with_suffix(prefix, suffix)),
                )?;
            }
            match &cfg.gat.params {
                Some(_) => {
                    require(stage, "gat.params", &cfg.gat.params)?;
                }
                None => {
                    require(stage, "inputs.labels (no gat.params given)", &i.labels)?;
                }
            }
        }
        Stage::Stack => {
            let prefix = require_prefix(stage, cfg)?;
            require(
                stage,
                "inputs.embeddings",
                &Some(with_suffix(prefix, ".probs.csv")),
            )?;
            match &cfg.stack.model {
                Some(_) => {
                    require(stage, "stack.model", &cfg.stack.model)?;
                }
                None => {
                    require(stage, "inputs.labels (no stack.model given)", &i.labels)?;
                }
            }
        }
        Stage::Report => {
            if i.coordinates.is_some() {
                require(stage, "inputs.coordinates", &i.coordinates)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn require_prefix(stage: Stage, cfg: &PipelineConfig) -> Result<&Path, Failure> {
    cfg.inputs.embeddings.as_deref().ok_or_else(|| {
        Failure::Validation(format!(
            "stage {}: inputs.embeddings is not configured",
            stage.name()
        ))
    })
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}

fn stage_path(cfg: &PipelineConfig, stage: Stage, file: &str) -> PathBuf {
    cfg.out.join(stage.name()).join(file)
}

fn load_corpus(run: &mut StageRun, cfg: &PipelineConfig) -> Result<Corpus, Failure> {
    let bytes = run.read(&stage_path(cfg, Stage::Ingest, "corpus.jsonl"))?;
    let window = cfg
        .window()
        .map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(corpus::read_corpus(&bytes[..], &window)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestSummary {
    lines_read: usize,
    skipped: Vec<SkippedLine>,
    outside_window: usize,
    messages: usize,
    tombstones: usize,
    schools: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkippedLine {
    line: usize,
    reason: String,
}

fn ingest(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("ingest", cfg);
    let comments = run.read(cfg.inputs.comments.as_deref().expect("checked"))?;
    let covariates = run.read(cfg.inputs.covariates.as_deref().expect("checked"))?;
    let window = cfg
        .window()
        .map_err(|e| Failure::Validation(e.to_string()))?;

    let parsed = corpus::parse_comments(&comments[..], cfg.ingest.on_malformed)?;
    for (line, reason) in &parsed.skipped {
        log::warn!("comments line {line} skipped: {reason}");
    }
    let lines_read = parsed.comments.len() + parsed.skipped.len();
    let valid = parsed.comments.len();
    let corpus = corpus::filter_window(parsed.comments, &window);
    for school in corpus.schools() {
        check_file_stem(school)?;
    }
    let covs = corpus::load_covariates(&covariates[..])?;

    let summary = IngestSummary {
        lines_read,
        skipped: parsed
            .skipped
            .iter()
            .map(|(line, reason)| SkippedLine {
                line: *line,
                reason: reason.clone(),
            })
            .collect(),
        outside_window: valid - corpus.len(),
        messages: corpus.len(),
        tombstones: corpus.comments().filter(|c| c.is_tombstone()).count(),
        schools: corpus
            .school_counts()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    };

    let mut buf = Vec::new();
    corpus::write_corpus(&mut buf, &corpus)?;
    run.put("corpus.jsonl", buf);
    run.put_json("covariates.json", &covs)?;
    run.put_json("descriptive.json", &corpus::descriptive_stats(&covs))?;
    run.put_json("summary.json", &summary)?;
    run.commit()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphIndexEntry {
    school_id: String,
    nodes: usize,
    edges: usize,
}

fn graph(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("graph", cfg);
    let corpus = load_corpus(&mut run, cfg)?;
    let schools: Vec<&str> = corpus.schools().collect();
    for s in &schools {
        check_file_stem(s)?;
    }
    let built: Vec<(Vec<u8>, Vec<u8>, GraphIndexEntry)> = pool(cfg)?.install(|| {
        schools
            .par_iter()
            .map(|&school| -> Result<_, Failure> {
                let g = build_graph(&corpus, school)?;
                let (mut nodes, mut edges) = (Vec::new(), Vec::new());
                g.write_nodes(&mut nodes)?;
                g.write_edges(&mut edges)?;
                let entry = GraphIndexEntry {
                    school_id: school.to_string(),
                    nodes: g.node_count(),
                    edges: g.edges().len(),
                };
                Ok((nodes, edges, entry))
            })
            .collect::<Result<_, _>>()
    })?;
    let mut index = Vec::new();
    for (nodes, edges, entry) in built {
        run.put(format!("{}.nodes", entry.school_id), nodes);
        run.put(format!("{}.edges", entry.school_id), edges);
        index.push(entry);
    }
    run.put_json("index.json", &index)?;
    run.commit()?;
    Ok(())
}

fn read_index(
    run: &mut StageRun,
    cfg: &PipelineConfig,
    stage: Stage,
) -> Result<Vec<GraphIndexEntry>, Failure> {
    let bytes = run.read(&stage_path(cfg, stage, "index.json"))?;
    let index: Vec<GraphIndexEntry> = serde_json::from_slice(&bytes)?;
    for e in &index {
        check_file_stem(&e.school_id)?;
    }
    Ok(index)
}

fn read_graph(
    run: &mut StageRun,
    cfg: &PipelineConfig,
    school: &str,
) -> Result<MessageGraph, Failure> {
    let nodes = run.read(&stage_path(cfg, Stage::Graph, &format!("{school}.nodes")))?;
    let edges = run.read(&stage_path(cfg, Stage::Graph, &format!("{school}.edges")))?;
    Ok(MessageGraph::read(school, &nodes[..], &edges[..])?)
}

/// Per-school sampling seed: the first eight bytes of
/// SHA-256(rng_seed little-endian ‖ school id), so schools draw independent
/// streams regardless of processing order.
pub fn school_seed(rng_seed: u64, school: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(rng_seed.to_le_bytes());
    h.update(school.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn sample(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("sample", cfg);
    let index = read_index(&mut run, cfg, Stage::Graph)?;
    let mut graphs = Vec::with_capacity(index.len());
    for e in &index {
        graphs.push(read_graph(&mut run, cfg, &e.school_id)?);
    }
    let (cap, batch) = (cfg.sample.cap, cfg.sample.seed_batch);
    let out: Vec<(Vec<u8>, Vec<u8>, Vec<u8>, GraphIndexEntry)> = pool(cfg)?.install(|| {
        graphs
            .par_iter()
            .map(|g| -> Result<_, Failure> {
                let seed = school_seed(cfg.rng_seed, g.school_id());
                let s = sample_capped(g, cap, batch, seed)?;
                let (mut nodes, mut edges, mut trace) = (Vec::new(), Vec::new(), Vec::new());
                s.write_nodes(g, &mut nodes)?;
                s.write_edges(g, &mut edges)?;
                s.write_trace(&mut trace)?;
                trace.push(b'\n');
                let entry = GraphIndexEntry {
                    school_id: g.school_id().to_string(),
                    nodes: s.nodes.len(),
                    edges: s.edges.len(),
                };
                Ok((nodes, edges, trace, entry))
            })
            .collect::<Result<_, _>>()
    })?;
    let mut index = Vec::new();
    for (nodes, edges, trace, entry) in out {
        run.put(format!("{}.nodes", entry.school_id), nodes);
        run.put(format!("{}.edges", entry.school_id), edges);
        run.put(format!("{}.trace.json", entry.school_id), trace);
        index.push(entry);
    }
    run.put_json("index.json", &index)?;
    run.commit()?;
    Ok(())
}

/// Reads a sampled node list (`parent_index<TAB>msg_id`) and its edges as
/// `(ids, child/parent id pairs)`.
fn read_sampled(
    nodes: &[u8],
    edges: &[u8],
) -> Result<(Vec<String>, Vec<(String, String)>), Failure> {
    let text =
        |b: &[u8]| String::from_utf8(b.to_vec()).map_err(|e| Failure::Runtime(e.to_string()));
    let ids = text(nodes)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('\t')
                .map(|(_, id)| id.to_string())
                .ok_or_else(|| Failure::Runtime(format!("sampled node line {l:?} lacks a tab")))
        })
        .collect::<Result<_, _>>()?;
    let pairs = text(edges)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('\t')
                .map(|(c, p)| (c.to_string(), p.to_string()))
                .ok_or_else(|| Failure::Runtime(format!("sampled edge line {l:?} lacks a tab")))
        })
        .collect::<Result<_, _>>()?;
    Ok((ids, pairs))
}

fn read_embeddings(run: &mut StageRun, cfg: &PipelineConfig) -> Result<EmbeddingMatrix, Failure> {
    let prefix = cfg.inputs.embeddings.as_deref().expect("checked");
    let data = run.read(&with_suffix(prefix, ".emb"))?;
    let ids = run.read(&with_suffix(prefix, ".ids"))?;
    let emb = EmbeddingMatrix::read(&data[..], &ids[..])?;
    if let Some(m) = run.read_optional(&with_suffix(prefix, ".manifest.json"))? {
        let manifest = ExportManifest::read(&m[..])?;
        manifest.check(&emb)?;
        if let Some(comments) = cfg.inputs.comments.as_deref().filter(|p| p.exists()) {
            let digest = sha256_hex(&std::fs::read(comments)?);
            if digest != manifest.input_sha256 {
                log::warn!(
                    "embeddings were exported from a different comments file than {}",
                    comments.display()
                );
            }
        }
    }
    Ok(emb)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainSummary {
    nodes: usize,
    labelled: usize,
    loss: f64,
    objective: f64,
    epochs: usize,
    converged: bool,
}

fn score(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("score", cfg);
    let index = read_index(&mut run, cfg, Stage::Graph)?;
    let emb = read_embeddings(&mut run, cfg)?;

    let params = match &cfg.gat.params {
        Some(path) => {
            let bytes = run.read(path)?;
            let p = GatParams::read(&bytes[..])?;
            if p.input_dim() != emb.dim() {
                return Err(Failure::Runtime(format!(
                    "GAT parameters expect {}-dimensional embeddings, file has {}",
                    p.input_dim(),
                    emb.dim()
                )));
            }
            Some(p)
        }
        None if index.is_empty() => None,
        None => {
            let labels_bytes = run.read(cfg.inputs.labels.as_deref().expect("checked"))?;
            let labels = corpus::read_labels(&labels_bytes[..])?;
            let sample_index = read_index(&mut run, cfg, Stage::Sample)?;
            let mut ids = Vec::new();
            let mut id_pairs = Vec::new();
            for e in &sample_index {
                let nodes = run.read(&stage_path(
                    cfg,
                    Stage::Sample,
                    &format!("{}.nodes", e.school_id),
                ))?;
                let edges = run.read(&stage_path(
                    cfg,
                    Stage::Sample,
                    &format!("{}.edges", e.school_id),
                ))?;
                let (i, p) = read_sampled(&nodes, &edges)?;
                ids.extend(i);
                id_pairs.extend(p);
            }
            let pos: HashMap<&str, usize> = ids
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            let edges = id_pairs
                .iter()
                .map(|(c, p)| match (pos.get(c.as_str()), pos.get(p.as_str())) {
                    (Some(&c), Some(&p)) => Ok((c, p)),
                    _ => Err(Failure::Runtime(format!(
                        "sampled edge {c} -> {p} names an unsampled node"
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let union = MessageGraph::from_parts("sampled", ids.clone(), edges)?;
            let x = emb.aligned_to(&union)?;
            let y: Vec<bool> = ids
                .iter()
                .map(|id| labels.get(id).copied().unwrap_or(false))
                .collect();
            let mask: Vec<bool> = ids.iter().map(|id| labels.contains_key(id)).collect();
            let labelled = mask.iter().filter(|&&m| m).count();
            if labelled == 0 {
                return Err(Failure::Runtime(
                    "no labelled message among the sampled nodes".into(),
                ));
            }
            let outcome = gat::gat_train(&cfg.gat.config, &union, &x, &y, &mask)?;
            let mut buf = Vec::new();
            outcome.params.write(&mut buf)?;
            buf.push(b'\n');
            run.put("gat_params.json", buf);
            run.put_json(
                "train.json",
                &TrainSummary {
                    nodes: union.node_count(),
                    labelled,
                    loss: outcome.loss,
                    objective: outcome.objective,
                    epochs: outcome.epochs,
                    converged: outcome.converged,
                },
            )?;
            Some(outcome.params)
        }
    };

    let mut graphs = Vec::with_capacity(index.len());
    for e in &index {
        graphs.push(read_graph(&mut run, cfg, &e.school_id)?);
    }
    let scored: Vec<SentimentProbs> = match &params {
        Some(params) => pool(cfg)?.install(|| {
            graphs
                .par_iter()
                .map(|g| -> Result<_, Failure> {
                    Ok(gat::gat_forward(params, g, &emb.aligned_to(g)?)?)
                })
                .collect::<Result<_, _>>()
        })?,
        None => Vec::new(),
    };
    let mut all = SentimentProbs {
        source: ProbSource::Gat,
        msg_ids: Vec::new(),
        p_negative: Vec::new(),
    };
    for s in scored {
        all.msg_ids.extend(s.msg_ids);
        all.p_negative.extend(s.p_negative);
    }
    let mut buf = Vec::new();
    all.write_csv(&mut buf)?;
    run.put("p_gat.csv", buf);
    run.commit()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackSummary {
    training_rows: usize,
    iterations: Option<usize>,
    deviance: Option<f64>,
    converged: Option<bool>,
    separated: Option<bool>,
    predictions: usize,
    excluded_tombstones: usize,
}

fn probs_map(p: &SentimentProbs) -> HashMap<&str, f64> {
    p.msg_ids
        .iter()
        .map(String::as_str)
        .zip(p.p_negative.iter().copied())
        .collect()
}

fn stack(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("stack", cfg);
    let corpus = load_corpus(&mut run, cfg)?;
    let gat_bytes = run.read(&stage_path(cfg, Stage::Score, "p_gat.csv"))?;
    let p_gat = SentimentProbs::read_csv(&gat_bytes[..], ProbSource::Gat)?;
    let prefix = cfg.inputs.embeddings.as_deref().expect("checked");
    let up_bytes = run.read(&with_suffix(prefix, ".probs.csv"))?;
    let p_up = SentimentProbs::read_csv(&up_bytes[..], ProbSource::Upstream)?;
    let (gat_of, up_of) = (probs_map(&p_gat), probs_map(&p_up));

    let excluded = if cfg.stack.exclude_tombstones {
        corpus.comments().filter(|c| c.is_tombstone()).count()
    } else {
        0
    };
    let rows: Vec<(&corpus::Message, f64, f64)> = corpus
        .messages()
        .iter()
        .filter(|m| !(cfg.stack.exclude_tombstones && m.comment.is_tombstone()))
        .map(|m| {
            let id = m.comment.msg_id.as_str();
            let g = gat_of.get(id).copied();
            let u = up_of.get(id).copied();
            match (g, u) {
                (Some(g), Some(u)) => Ok((m, g, u)),
                (None, _) => Err(Failure::Runtime(format!(
                    "no GAT probability for message {id:?}"
                ))),
                (_, None) => Err(Failure::Runtime(format!(
                    "no upstream probability for message {id:?}"
                ))),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut summary = StackSummary {
        training_rows: 0,
        iterations: None,
        deviance: None,
        converged: None,
        separated: None,
        predictions: rows.len(),
        excluded_tombstones: excluded,
    };
    let model = match &cfg.stack.model {
        Some(path) => {
            let bytes = run.read(path)?;
            Some(StackModel::read(&bytes[..])?)
        }
        None if rows.is_empty() => None,
        None => {
            let bytes = run.read(cfg.inputs.labels.as_deref().expect("checked"))?;
            let labels = corpus::read_labels(&bytes[..])?;
            let obs: Vec<StackObservation> = rows
                .iter()
                .filter_map(|&(m, g, u)| {
                    labels.get(&m.comment.msg_id).map(|&l| StackObservation {
                        msg_id: m.comment.msg_id.clone(),
                        p_gat: g,
                        p_upstream: u,
                        label: Some(l),
                    })
                })
                .collect();
            let fit = stacker::fit_stack(&obs, cfg.stack.transform)?;
            summary.training_rows = obs.len();
            summary.iterations = Some(fit.iterations);
            summary.deviance = Some(fit.deviance);
            summary.converged = Some(fit.converged);
            summary.separated = Some(fit.separated);
            Some(fit.model)
        }
    };
    let model = model.map(|m| StackModel {
        threshold: cfg.stack.threshold,
        ..m
    });

    let mut preds = Vec::with_capacity(rows.len());
    if let Some(model) = &model {
        for (m, g, u) in rows {
            let (p, negative) = stacker::predict_stack(model, g, u)?;
            preds.push(Prediction {
                msg_id: m.comment.msg_id.clone(),
                school_id: m.comment.school_id.clone(),
                year: m.year,
                p_gat: g,
                p_upstream: u,
                p_stacked: p,
                class: negative as u8,
            });
        }
        let mut buf = Vec::new();
        model.write(&mut buf)?;
        buf.push(b'\n');
        run.put("stack_model.json", buf);
    }
    let mut buf = Vec::new();
    stacker::write_predictions(&mut buf, &preds)?;
    run.put("predictions.csv", buf);
    run.put_json("stack_fit.json", &summary)?;
    run.commit()?;
    Ok(())
}

fn glmm_stage(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("glmm", cfg);
    let pred_bytes = run.read(&stage_path(cfg, Stage::Stack, "predictions.csv"))?;
    let preds = stacker::read_predictions(&pred_bytes[..])?;
    let cov_bytes = run.read(&stage_path(cfg, Stage::Ingest, "covariates.json"))?;
    let covs: Vec<SchoolCovariates> = serde_json::from_slice(&cov_bytes)?;

    let table = if preds.is_empty() {
        run.put_json("fit.json", &Option::<glmm::GlmmFit>::None)?;
        OddsRatioTable { rows: Vec::new() }
    } else {
        let design = glmm::build_design(&preds, &covs, &cfg.glmm.reference)?.compress();
        let mut buf = Vec::new();
        design.write(&mut buf)?;
        run.put("design.glmm.gz", buf);
        let fit = glmm::fit_glmm_with(&design, &cfg.glmm.options)?;
        if !fit.converged {
            log::warn!("mixed model optimizer did not converge");
        }
        if fit.boundary {
            log::warn!("random-intercept standard deviation at the boundary");
        }
        let table = glmm::wald_table(&fit, &design)?;
        run.put_json("fit.json", &fit)?;
        table
    };
    let mut buf = Vec::new();
    table.write_json(&mut buf)?;
    buf.push(b'\n');
    run.put("odds_ratios.json", buf);
    run.commit()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Adjusted {
    name: String,
    p_raw: f64,
    p_adjusted: f64,
}

fn report_stage(cfg: &PipelineConfig) -> Result<(), Failure> {
    let mut run = StageRun::new("report", cfg);
    let pred_bytes = run.read(&stage_path(cfg, Stage::Stack, "predictions.csv"))?;
    let preds = stacker::read_predictions(&pred_bytes[..])?;
    let or_bytes = run.read(&stage_path(cfg, Stage::Glmm, "odds_ratios.json"))?;
    let table: OddsRatioTable = serde_json::from_slice(&or_bytes)?;
    let coords = match &cfg.inputs.coordinates {
        Some(p) => report::load_coordinates(&run.read(p)?[..])?,
        None => BTreeMap::new(),
    };

    let shares = report::negative_share(&preds, cfg.glmm.reference.year);
    let raw = PValueSet::new(table.p_values())?;
    let adjusted = if raw.is_empty() {
        None
    } else {
        Some(report::bh_adjust(&raw)?)
    };
    let adjusted_rows: Vec<Adjusted> = match &adjusted {
        Some(adj) => raw
            .entries()
            .iter()
            .zip(adj.entries())
            .map(|((name, p), (_, q))| Adjusted {
                name: name.clone(),
                p_raw: *p,
                p_adjusted: *q,
            })
            .collect(),
        None => Vec::new(),
    };

    // Render into a scratch directory inside the output root, then hand the
    // bytes to the stage so they are renamed into place with the rest.
    std::fs::create_dir_all(&cfg.out)?;
    let scratch = tempfile::Builder::new()
        .prefix(".report-")
        .tempdir_in(&cfg.out)?;
    let ors = (!table.rows.is_empty()).then_some(&table);
    let emitted = report::emit_figures(
        scratch.path(),
        &shares,
        ors,
        adjusted.as_ref(),
        &coords,
        &cfg.report.projection,
    )?;
    for w in &emitted.warnings {
        log::warn!("{w}");
    }
    for path in &emitted.files {
        let name = path
            .file_name()
            .ok_or_else(|| {
                Failure::Runtime(format!("figure path {} has no file name", path.display()))
            })?
            .to_string_lossy()
            .into_owned();
        run.put(name, std::fs::read(path)?);
    }
    run.put_json("adjusted_p.json", &adjusted_rows)?;
    run.put_json("warnings.json", &emitted.warnings)?;
    run.commit()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn school_seeds_differ_and_are_stable() {
        assert_eq!(school_seed(7, "a"), school_seed(7, "a"));
        assert_ne!(school_seed(7, "a"), school_seed(7, "b"));
        assert_ne!(school_seed(7, "a"), school_seed(8, "a"));
    }

    #[test]
    fn suffix_is_appended_not_replaced() {
        assert_eq!(
            with_suffix(Path::new("x/emb.v1"), ".emb"),
            PathBuf::from("x/emb.v1.emb")
        );
    }
}
