//! Graph attention network over message embeddings.
//!
//! Each layer computes, per head, `z = W h`, raw scores
//! `e_ij = LeakyReLU(a_src · z_i + a_dst · z_j)` over the attention
//! neighborhood of `i` (always including `i`), softmax weights `α_ij`, and the
//! aggregate `Σ_j α_ij z_j`. Hidden layers concatenate heads and apply ELU; the
//! output layer averages heads into two logits, of which index 1 is the
//! negative class.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::thread_graph::MessageGraph;

pub const NEGATIVE_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The message a node replies to.
    #[default]
    Successors,
    /// Replies to the node.
    Predecessors,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    /// Total attention layers, including the output layer.
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub output_heads: usize,
    pub classes: usize,
    pub negative_slope: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub direction: Direction,
    pub init_seed: u64,
    /// L2 penalty on attention and weight parameters (biases excluded).
    pub weight_decay: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 8,
            hidden_dim: 8,
            output_heads: 1,
            classes: 2,
            negative_slope: 0.2,
            learning_rate: 0.05,
            max_epochs: 500,
            tolerance: 1e-7,
            direction: Direction::Successors,
            init_seed: 0,
            weight_decay: 5e-4,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.hidden_dim == 0 || self.output_heads == 0 {
            return bad("GAT layer, head and dimension counts must be >= 1");
        }
        if self.classes != 2 {
            return bad("GAT output must have exactly 2 classes");
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return bad("negative slope must lie in (0, 1)");
        }
        if !(self.tolerance > 0.0) || !(self.learning_rate > 0.0) {
            return bad("tolerance and learning rate must be > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `out_dim x in_dim`, row-major.
    pub w: Vec<f64>,
    /// Source half then neighbor half, `2 * out_dim`.
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Concatenate heads and apply ELU (hidden) or average them (output).
    pub concat: bool,
    pub heads: Vec<HeadParams>,
    /// `heads * out_dim` when concatenating, else `out_dim`.
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn width(&self) -> usize {
        if self.concat {
            self.heads.len() * self.out_dim
        } else {
            self.out_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    pub negative_slope: f64,
    pub direction: Direction,
    pub layers: Vec<LayerParams>,
}

impl GatParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &GatConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = StreamRng::new(config.init_seed);
        let mut uniform = |r: f64| (2.0 * rng.unit() - 1.0) * r;
        let mut layers = Vec::with_capacity(config.layers);
        let mut in_dim = input_dim;
        for l in 0..config.layers {
            let last = l + 1 == config.layers;
            let (heads, out_dim) = if last {
                (config.output_heads, config.classes)
            } else {
                (config.heads, config.hidden_dim)
            };
            let rw = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let ra = (6.0 / (2 * out_dim + 1) as f64).sqrt();
            let heads = (0..heads)
                .map(|_| HeadParams {
                    w: (0..out_dim * in_dim).map(|_| uniform(rw)).collect(),
                    a: (0..2 * out_dim).map(|_| uniform(ra)).collect(),
                })
                .collect::<Vec<_>>();
            let layer = LayerParams {
                in_dim,
                out_dim,
                concat: !last,
                bias: vec![0.0; if last { out_dim } else { heads.len() * out_dim }],
                heads,
            };
            in_dim = layer.width();
            layers.push(layer);
        }
        Ok(Self {
            negative_slope: config.negative_slope,
            direction: config.direction,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Shape("GAT has no layers".into()));
        };
        if last.width() != 2 {
            return Err(Error::Shape(format!("output width {} != 2", last.width())));
        }
        let mut expect_in = self.input_dim();
        for (li, l) in self.layers.iter().enumerate() {
            let fail = |m: String| Err(Error::Shape(format!("layer {li}: {m}")));
            if l.in_dim != expect_in {
                return fail(format!("input {} but previous width {expect_in}", l.in_dim));
            }
            if l.heads.is_empty() {
                return fail("no heads".into());
            }
            for h in &l.heads {
                if h.w.len() != l.out_dim * l.in_dim || h.a.len() != 2 * l.out_dim {
                    return fail("head parameter shape".into());
                }
            }
            if l.bias.len() != l.width() {
                return fail("bias length".into());
            }
            expect_in = l.width();
        }
        if !self.values().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("GAT parameters".into()));
        }
        Ok(())
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| {
            l.heads
                .iter()
                .flat_map(|h| h.w.iter().chain(h.a.iter()))
                .chain(l.bias.iter())
        })
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            l.heads
                .iter_mut()
                .flat_map(|h| h.w.iter_mut().chain(h.a.iter_mut()))
                .chain(l.bias.iter_mut())
        })
    }

    /// All parameters in a fixed order: per layer, per head `w` then `a`, then the bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn assign(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for v in self.values_mut() {
            *v = *it.next().expect("flat parameter vector too short");
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.values_mut().for_each(|v| *v = 0.0);
        z
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let p: Self = serde_json::from_reader(r)?;
        p.validate()?;
        Ok(p)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbSource {
    Gat,
    Upstream,
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentProbs {
    pub source: ProbSource,
    pub msg_ids: Vec<String>,
    pub p_negative: Vec<f64>,
}

impl SentimentProbs {
    pub fn len(&self) -> usize {
        self.msg_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msg_ids.is_empty()
    }

    pub fn get(&self, msg_id: &str) -> Option<f64> {
        self.msg_ids
            .iter()
            .position(|m| m == msg_id)
            .map(|i| self.p_negative[i])
    }

    /// CSV with columns `msg_id,p_negative`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(["msg_id", "p_negative"])?;
        for (id, p) in self.msg_ids.iter().zip(&self.p_negative) {
            wtr.write_record([id.clone(), p.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads `msg_id` and `p_negative` columns; other columns are ignored.
    pub fn read_csv<R: Read>(r: R, source: ProbSource) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            msg_id: String,
            p_negative: f64,
        }
        let mut msg_ids = Vec::new();
        let mut p_negative = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, row) in csv::Reader::from_reader(r).deserialize::<Row>().enumerate() {
            let row = row?;
            if !(0.0..=1.0).contains(&row.p_negative) {
                return Err(Error::Field {
                    row: i + 2,
                    column: "p_negative".into(),
                    message: format!("{} outside [0, 1]", row.p_negative),
                });
            }
            if !seen.insert(row.msg_id.clone()) {
                return Err(Error::DuplicateId(row.msg_id));
            }
            msg_ids.push(row.msg_id);
            p_negative.push(row.p_negative);
        }
        Ok(Self {
            source,
            msg_ids,
            p_negative,
        })
    }
}

/// Attention neighborhoods in flattened form: node `i` attends to
/// `members[offsets[i]..offsets[i + 1]]`, self first, then ascending.
#[derive(Debug, Clone)]
struct Neighborhoods {
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl Neighborhoods {
    fn new(graph: &MessageGraph, direction: Direction) -> Self {
        let n = graph.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut members = Vec::new();
        offsets.push(0);
        for i in 0..n {
            members.push(i);
            let start = members.len();
            match direction {
                Direction::Successors => members.extend_from_slice(graph.successors(i)),
                Direction::Predecessors => members.extend_from_slice(graph.predecessors(i)),
                Direction::Both => {
                    members.extend_from_slice(graph.successors(i));
                    members.extend_from_slice(graph.predecessors(i));
                    members[start..].sort_unstable();
                }
            }
            let mut tail = members.split_off(start);
            tail.dedup();
            members.extend(tail);
            offsets.push(members.len());
        }
        Self { offsets, members }
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

struct HeadCache {
    z: Vec<f64>,
    /// Pre-activation score per neighborhood slot.
    u: Vec<f64>,
    alpha: Vec<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    heads: Vec<HeadCache>,
    pre: Vec<f64>,
}

struct Forward {
    caches: Vec<LayerCache>,
    logits: Vec<f64>,
}

fn layer_forward(
    layer: &LayerParams,
    nb: &Neighborhoods,
    slope: f64,
    input: Vec<f64>,
    n: usize,
) -> (Vec<f64>, LayerCache) {
    let (fin, fout) = (layer.in_dim, layer.out_dim);
    let k = layer.heads.len();
    let width = layer.width();
    let mut pre = vec![0.0; n * width];
    let mut heads = Vec::with_capacity(k);
    for (hk, head) in layer.heads.iter().enumerate() {
        let mut z = vec![0.0; n * fout];
        for i in 0..n {
            let x = &input[i * fin..(i + 1) * fin];
            for o in 0..fout {
                let w = &head.w[o * fin..(o + 1) * fin];
                z[i * fout + o] = w.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
        let (a_src, a_dst) = head.a.split_at(fout);
        let dot = |v: &[f64], i: usize| -> f64 {
            v.iter()
                .zip(&z[i * fout..(i + 1) * fout])
                .map(|(a, b)| a * b)
                .sum()
        };
        let src: Vec<f64> = (0..n).map(|i| dot(a_src, i)).collect();
        let dst: Vec<f64> = (0..n).map(|i| dot(a_dst, i)).collect();

        let mut u = vec![0.0; nb.members.len()];
        let mut alpha = vec![0.0; nb.members.len()];
        for i in 0..n {
            let r = nb.range(i);
            let mut max = f64::NEG_INFINITY;
            for s in r.clone() {
                u[s] = src[i] + dst[nb.members[s]];
                max = max.max(leaky(u[s], slope));
            }
            let mut total = 0.0;
            for s in r.clone() {
                alpha[s] = (leaky(u[s], slope) - max).exp();
                total += alpha[s];
            }
            for s in r.clone() {
                alpha[s] /= total;
            }
            let (offset, scale) = if layer.concat {
                (hk * fout, 1.0)
            } else {
                (0, 1.0 / k as f64)
            };
            for s in r {
                let j = nb.members[s];
                let wgt = alpha[s] * scale;
                for o in 0..fout {
                    pre[i * width + offset + o] += wgt * z[j * fout + o];
                }
            }
        }
        heads.push(HeadCache { z, u, alpha });
    }
    for i in 0..n {
        for c in 0..width {
            pre[i * width + c] += layer.bias[c];
        }
    }
    let out = if layer.concat {
        pre.iter().map(|&x| elu(x)).collect()
    } else {
        pre.clone()
    };
    (out, LayerCache { input, heads, pre })
}

fn run_forward(params: &GatParams, nb: &Neighborhoods, features: Vec<f64>, n: usize) -> Forward {
    let mut h = features;
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, cache) = layer_forward(layer, nb, params.negative_slope, h, n);
        caches.push(cache);
        h = out;
    }
    Forward { caches, logits: h }
}

fn softmax2(l: &[f64]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

fn check_inputs(
    params: &GatParams,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
) -> Result<()> {
    params.validate()?;
    if embeddings.rows() != graph.node_count() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} graph nodes",
            embeddings.rows(),
            graph.node_count()
        )));
    }
    if embeddings.dim() != params.input_dim() {
        return Err(Error::Shape(format!(
            "embedding dimension {} but network expects {}",
            embeddings.dim(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Per-node negative-class probabilities.
pub fn gat_forward(
    params: &GatParams,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
) -> Result<SentimentProbs> {
    check_inputs(params, graph, embeddings)?;
    let n = graph.node_count();
    let nb = Neighborhoods::new(graph, params.direction);
    let fwd = run_forward(params, &nb, embeddings.as_f64(), n);
    let p_negative = fwd
        .logits
        .chunks_exact(2)
        .map(|l| softmax2(l)[NEGATIVE_CLASS])
        .collect();
    Ok(SentimentProbs {
        source: ProbSource::Gat,
        msg_ids: graph.node_ids().to_vec(),
        p_negative,
    })
}

/// Attention weights of one head: `(i, j, α_ij)` for every neighborhood slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub entries: Vec<(usize, usize, f64)>,
    /// Raw score `a_src · z_i + a_dst · z_j` before the leaky rectifier, per entry.
    pub scores: Vec<f64>,
}

pub fn attention_weights(
    params: &GatParams,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
) -> Result<Vec<AttentionMap>> {
    check_inputs(params, graph, embeddings)?;
    let n = graph.node_count();
    let nb = Neighborhoods::new(graph, params.direction);
    let fwd = run_forward(params, &nb, embeddings.as_f64(), n);
    let mut out = Vec::new();
    for (l, cache) in fwd.caches.iter().enumerate() {
        for (h, hc) in cache.heads.iter().enumerate() {
            let entries = (0..n)
                .flat_map(|i| nb.range(i).map(move |s| (i, s)))
                .map(|(i, s)| (i, nb.members[s], hc.alpha[s]))
                .collect();
            let scores = hc.u.clone();
            out.push(AttentionMap {
                layer: l,
                head: h,
                entries,
                scores,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGradient {
    pub loss: f64,
    pub gradient: GatParams,
}

fn check_labels(n: usize, labels: &[bool], mask: &[bool]) -> Result<usize> {
    if labels.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "labels ({}) and mask ({}) must have one entry per node ({n})",
            labels.len(),
            mask.len()
        )));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::Invalid("training mask is empty".into()));
    }
    Ok(m)
}

fn masked_loss(logits: &[f64], labels: &[bool], mask: &[bool], m: usize) -> f64 {
    let mut loss = 0.0;
    for (i, l) in logits.chunks_exact(2).enumerate() {
        if mask[i] {
            let target = labels[i] as usize;
            let mx = l[0].max(l[1]);
            let lse = mx + ((l[0] - mx).exp() + (l[1] - mx).exp()).ln();
            loss += lse - l[target];
        }
    }
    loss / m as f64
}

/// Mean cross-entropy over masked nodes and its exact gradient.
pub fn gat_gradient(
    params: &GatParams,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
    labels: &[bool],
    mask: &[bool],
) -> Result<LossAndGradient> {
    check_inputs(params, graph, embeddings)?;
    let n = graph.node_count();
    let m = check_labels(n, labels, mask)?;
    let nb = Neighborhoods::new(graph, params.direction);
    Ok(loss_and_gradient(
        params,
        &nb,
        embeddings.as_f64(),
        n,
        labels,
        mask,
        m,
    ))
}

fn loss_and_gradient(
    params: &GatParams,
    nb: &Neighborhoods,
    features: Vec<f64>,
    n: usize,
    labels: &[bool],
    mask: &[bool],
    m: usize,
) -> LossAndGradient {
    let fwd = run_forward(params, nb, features, n);
    let loss = masked_loss(&fwd.logits, labels, mask, m);
    let slope = params.negative_slope;

    let mut d_out = vec![0.0; n * 2];
    for i in 0..n {
        if mask[i] {
            let p = softmax2(&fwd.logits[2 * i..2 * i + 2]);
            let target = labels[i] as usize;
            for c in 0..2 {
                d_out[2 * i + c] = (p[c] - if c == target { 1.0 } else { 0.0 }) / m as f64;
            }
        }
    }

    let mut grad = params.zeros_like();
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let cache = &fwd.caches[li];
        let g = &mut grad.layers[li];
        let (fin, fout) = (layer.in_dim, layer.out_dim);
        let width = layer.width();
        let k = layer.heads.len();

        let d_pre: Vec<f64> = if layer.concat {
            d_out
                .iter()
                .zip(&cache.pre)
                .map(|(d, &x)| d * elu_grad(x))
                .collect()
        } else {
            d_out
        };
        for i in 0..n {
            for c in 0..width {
                g.bias[c] += d_pre[i * width + c];
            }
        }

        let mut d_input = vec![0.0; n * fin];
        for (hk, (head, hc)) in layer.heads.iter().zip(&cache.heads).enumerate() {
            let (offset, scale) = if layer.concat {
                (hk * fout, 1.0)
            } else {
                (0, 1.0 / k as f64)
            };
            let (a_src, a_dst) = head.a.split_at(fout);
            let mut dz = vec![0.0; n * fout];
            let mut d_src = vec![0.0; n];
            let mut d_dst = vec![0.0; n];
            let mut d_alpha = vec![0.0; nb.members.len()];
            for i in 0..n {
                let dagg = &d_pre[i * width + offset..i * width + offset + fout];
                let r = nb.range(i);
                let mut weighted = 0.0;
                for s in r.clone() {
                    let j = nb.members[s];
                    let zj = &hc.z[j * fout..(j + 1) * fout];
                    let da: f64 = dagg.iter().zip(zj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    d_alpha[s] = da;
                    weighted += hc.alpha[s] * da;
                    for o in 0..fout {
                        dz[j * fout + o] += hc.alpha[s] * scale * dagg[o];
                    }
                }
                for s in r {
                    let de = hc.alpha[s] * (d_alpha[s] - weighted);
                    let du = if hc.u[s] > 0.0 { de } else { slope * de };
                    d_src[i] += du;
                    d_dst[nb.members[s]] += du;
                }
            }
            let gh = &mut g.heads[hk];
            for i in 0..n {
                let zi = &hc.z[i * fout..(i + 1) * fout];
                for o in 0..fout {
                    gh.a[o] += d_src[i] * zi[o];
                    gh.a[fout + o] += d_dst[i] * zi[o];
                    dz[i * fout + o] += d_src[i] * a_src[o] + d_dst[i] * a_dst[o];
                }
            }
            for i in 0..n {
                let x = &cache.input[i * fin..(i + 1) * fin];
                for o in 0..fout {
                    let d = dz[i * fout + o];
                    if d == 0.0 {
                        continue;
                    }
                    let w = &head.w[o * fin..(o + 1) * fin];
                    let gw = &mut gh.w[o * fin..(o + 1) * fin];
                    for f in 0..fin {
                        gw[f] += d * x[f];
                        d_input[i * fin + f] += d * w[f];
                    }
                }
            }
        }
        d_out = d_input;
    }
    LossAndGradient {
        loss,
        gradient: grad,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: GatParams,
    /// Mean cross-entropy on the masked nodes.
    pub loss: f64,
    /// Cross-entropy plus the weight-decay penalty, the quantity minimized.
    pub objective: f64,
    pub epochs: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Full-batch gradient descent with backtracking: a step is accepted only if
/// it satisfies the Armijo decrease condition, so the loss history never
/// increases. The step grows after each success and halves on each rejection.
pub fn gat_train(
    config: &GatConfig,
    graph: &MessageGraph,
    embeddings: &EmbeddingMatrix,
    labels: &[bool],
    mask: &[bool],
) -> Result<TrainOutcome> {
    let mut params = GatParams::init(config, embeddings.dim())?;
    check_inputs(&params, graph, embeddings)?;
    let n = graph.node_count();
    let m = check_labels(n, labels, mask)?;
    let nb = Neighborhoods::new(graph, params.direction);
    let features = embeddings.as_f64();

    let decay = config.weight_decay;
    let penalized = penalty_mask(&params);
    // objective = cross-entropy + decay/2 * |W, a|²
    let eval = |theta: &[f64], p: &mut GatParams| -> Step {
        p.assign(theta);
        let lg = loss_and_gradient(p, &nb, features.clone(), n, labels, mask, m);
        let mut objective = lg.loss;
        let mut gradient = lg.gradient.flatten();
        for ((g, t), &on) in gradient.iter_mut().zip(theta).zip(&penalized) {
            if on {
                objective += 0.5 * decay * t * t;
                *g += decay * t;
            }
        }
        Step {
            cross_entropy: lg.loss,
            objective,
            gradient,
        }
    };
    let mut theta = params.flatten();
    let mut current = eval(&theta, &mut params);
    if !current.objective.is_finite() {
        return Err(Error::NonFinite(format!(
            "initial training loss {}",
            current.objective
        )));
    }
    let mut step = config.learning_rate;
    let mut history = vec![current.objective];
    let mut converged = false;
    let mut epochs = 0;

    while epochs < config.max_epochs {
        epochs += 1;
        let g = &current.gradient;
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        if g.iter().all(|v| v.abs() < config.tolerance) {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(g).map(|(t, d)| t - step * d).collect();
            let next = eval(&trial, &mut params);
            if next.objective.is_finite()
                && next.objective <= current.objective - 1e-4 * step * g_sq
            {
                accepted = Some((trial, next));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            // no descent step found at any scale: stationary to working precision
            converged = true;
            break;
        };
        let change = current.objective - next.objective;
        theta = trial;
        current = next;
        history.push(current.objective);
        step *= 1.5;
        if change <= config.tolerance * current.objective.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    params.assign(&theta);
    if !converged {
        log::warn!(
            "GAT training stopped after {epochs} epochs without converging (loss {})",
            current.cross_entropy
        );
    }
    Ok(TrainOutcome {
        params,
        loss: current.cross_entropy,
        objective: current.objective,
        epochs,
        converged,
        history,
    })
}

struct Step {
    cross_entropy: f64,
    objective: f64,
    gradient: Vec<f64>,
}

/// Flattened-order flags: true for `W` and `a` entries, false for biases.
fn penalty_mask(params: &GatParams) -> Vec<bool> {
    let mut out = Vec::with_capacity(params.len());
    for l in &params.layers {
        for h in &l.heads {
            out.extend(std::iter::repeat_n(true, h.w.len() + h.a.len()));
        }
        out.extend(std::iter::repeat_n(false, l.bias.len()));
    }
    out
}
