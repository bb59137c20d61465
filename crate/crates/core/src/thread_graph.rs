//! Directed reply graphs and the capped seeded-BFS subgraph sampler.
//!
//! Edges point from a reply to the message it replies to. Node indices are
//! appearance indices: the position of the message in the school's input
//! order.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Compressed adjacency: the neighbors of `v` are `targets[offsets[v]..offsets[v + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    fn from_pairs(n: usize, pairs: impl Iterator<Item = (usize, usize)> + Clone) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for (src, _) in pairs.clone() {
            offsets[src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0usize; offsets[n]];
        for (src, dst) in pairs {
            targets[fill[src]] = dst;
            fill[src] += 1;
        }
        for v in 0..n {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, targets }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    school_id: String,
    node_ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    out_adj: Csr,
    in_adj: Csr,
}

impl MessageGraph {
    /// Builds a graph from node ids in appearance order and (child, parent) index pairs.
    pub fn from_parts(
        school_id: impl Into<String>,
        node_ids: Vec<String>,
        mut edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = node_ids.len();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Invalid(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::Invalid(format!("self-edge on node {u}")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let out_adj = Csr::from_pairs(n, edges.iter().copied());
        let in_adj = Csr::from_pairs(n, edges.iter().map(|&(u, v)| (v, u)));
        Ok(Self {
            school_id: school_id.into(),
            node_ids,
            edges,
            out_adj,
            in_adj,
        })
    }

    pub fn school_id(&self) -> &str {
        &self.school_id
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// (child, parent) pairs, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Messages this node replies to.
    pub fn successors(&self, v: usize) -> &[usize] {
        self.out_adj.neighbors(v)
    }

    /// Replies to this node.
    pub fn predecessors(&self, v: usize) -> &[usize] {
        self.in_adj.neighbors(v)
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_adj.degree(v)
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_adj.degree(v)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.successors(u).binary_search(&v).is_ok()
    }

    /// Union of successors and predecessors, ascending by appearance index.
    pub fn undirected(&self) -> Csr {
        Csr::from_pairs(
            self.node_count(),
            self.edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]),
        )
        .dedup()
    }

    pub fn write_edges<W: Write>(&self, mut w: W) -> Result<()> {
        for &(u, v) in &self.edges {
            writeln!(w, "{}\t{}", self.node_ids[u], self.node_ids[v])?;
        }
        Ok(())
    }

    pub fn write_nodes<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, id) in self.node_ids.iter().enumerate() {
            writeln!(w, "{i}\t{id}")?;
        }
        Ok(())
    }

    /// Reads the node manifest and edge list written by [`write_nodes`](Self::write_nodes)
    /// and [`write_edges`](Self::write_edges).
    pub fn read<N: BufRead, E: BufRead>(school_id: &str, nodes: N, edges: E) -> Result<Self> {
        let mut node_ids = Vec::new();
        let mut index = HashMap::new();
        for (ln, line) in nodes.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (pos, id) = line.split_once('\t').ok_or_else(|| Error::Record {
                line: ln + 1,
                message: "expected index<TAB>msg_id".into(),
            })?;
            let pos: usize = pos.parse().map_err(|_| Error::Record {
                line: ln + 1,
                message: format!("bad index {pos:?}"),
            })?;
            if pos != node_ids.len() {
                return Err(Error::Record {
                    line: ln + 1,
                    message: format!("index {pos} out of sequence"),
                });
            }
            if index.insert(id.to_string(), pos).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
            node_ids.push(id.to_string());
        }
        let mut pairs = Vec::new();
        for (ln, line) in edges.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::Record {
                line: ln + 1,
                message: m,
            };
            let (c, p) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected child<TAB>parent".into()))?;
            let c = *index
                .get(c)
                .ok_or_else(|| bad(format!("unknown node {c:?}")))?;
            let p = *index
                .get(p)
                .ok_or_else(|| bad(format!("unknown node {p:?}")))?;
            pairs.push((c, p));
        }
        Self::from_parts(school_id, node_ids, pairs)
    }
}

impl Csr {
    fn dedup(mut self) -> Self {
        let n = self.offsets.len() - 1;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(self.targets.len());
        offsets.push(0);
        for v in 0..n {
            let s = &mut self.targets[self.offsets[v]..self.offsets[v + 1]];
            let mut last = None;
            for &t in s.iter() {
                if last != Some(t) {
                    targets.push(t);
                    last = Some(t);
                }
            }
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }
}

/// One node per message of the school; an edge for every reply whose parent
/// is also in the graph. Replies to messages outside the corpus stay parentless.
pub fn build_graph(corpus: &Corpus, school_id: &str) -> Result<MessageGraph> {
    let msgs: Vec<_> = corpus
        .school(school_id)
        .ok_or_else(|| Error::UnknownSchool(school_id.to_string()))?
        .collect();
    let index: HashMap<&str, usize> = msgs
        .iter()
        .enumerate()
        .map(|(i, m)| (m.comment.msg_id.as_str(), i))
        .collect();
    let edges = msgs
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let parent = m.comment.parent_id.as_deref()?;
            index.get(parent).map(|&p| (i, p))
        })
        .collect();
    let node_ids = msgs.iter().map(|m| m.comment.msg_id.clone()).collect();
    MessageGraph::from_parts(school_id, node_ids, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceEvent {
    /// Random draw; `batch` counts seed batches from 0.
    Seed { node: usize, batch: usize },
    /// Breadth-first addition reached through the already-selected `via`.
    Grow { node: usize, via: usize },
}

impl TraceEvent {
    pub fn node(&self) -> usize {
        match *self {
            TraceEvent::Seed { node, .. } | TraceEvent::Grow { node, .. } => node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingTrace {
    pub rng_seed: u64,
    pub cap: usize,
    pub seed_batch: usize,
    pub parent_nodes: usize,
    pub batches: usize,
    /// Additions in order. Empty when the graph was already under the cap.
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubgraph {
    /// Selected parent indices, ascending.
    pub nodes: Vec<usize>,
    /// Parent edges with both endpoints selected, in parent-index terms.
    pub edges: Vec<(usize, usize)>,
    pub trace: SamplingTrace,
}

impl SampledSubgraph {
    /// The subgraph as a standalone graph with nodes kept in appearance order.
    pub fn to_graph(&self, parent: &MessageGraph) -> MessageGraph {
        let mut local = vec![usize::MAX; parent.node_count()];
        for (i, &v) in self.nodes.iter().enumerate() {
            local[v] = i;
        }
        let ids = self
            .nodes
            .iter()
            .map(|&v| parent.node_ids[v].clone())
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| (local[u], local[v]))
            .collect();
        MessageGraph::from_parts(parent.school_id.clone(), ids, edges)
            .expect("induced subgraph of a valid graph is valid")
    }

    /// Writes `appearance_index<TAB>msg_id` for every selected node.
    pub fn write_nodes<W: Write>(&self, parent: &MessageGraph, mut w: W) -> Result<()> {
        for &v in &self.nodes {
            writeln!(w, "{v}\t{}", parent.node_ids[v])?;
        }
        Ok(())
    }

    pub fn write_edges<W: Write>(&self, parent: &MessageGraph, mut w: W) -> Result<()> {
        for &(u, v) in &self.edges {
            writeln!(w, "{}\t{}", parent.node_ids[u], parent.node_ids[v])?;
        }
        Ok(())
    }

    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.trace)?;
        Ok(())
    }
}

/// Draws up to `want` distinct unselected nodes by rejection on uniform indices.
fn draw_batch(rng: &mut StreamRng, selected: &[bool], want: usize) -> Vec<usize> {
    let n = selected.len() as u64;
    let mut batch: Vec<usize> = Vec::with_capacity(want);
    while batch.len() < want {
        let v = rng.below(n) as usize;
        if !selected[v] && !batch.contains(&v) {
            batch.push(v);
        }
    }
    batch
}

/// Seeded breadth-first sampling down to exactly `cap` nodes.
///
/// Graphs with at most `cap` nodes are returned whole. Otherwise `seed_batch`
/// unselected nodes are drawn uniformly, then the selection grows breadth-first
/// over undirected adjacency, visiting each node's neighbors in appearance order.
/// Whenever the frontier empties a fresh batch is drawn. The step that would
/// cross the cap is truncated to its first nodes in order.
pub fn sample_capped(
    graph: &MessageGraph,
    cap: usize,
    seed_batch: usize,
    rng_seed: u64,
) -> Result<SampledSubgraph> {
    if seed_batch == 0 {
        return Err(Error::Config("seed batch must be at least 1".into()));
    }
    if cap < seed_batch {
        return Err(Error::Config(format!(
            "cap ({cap}) must be at least the seed batch ({seed_batch})"
        )));
    }
    let n = graph.node_count();
    let mut trace = SamplingTrace {
        rng_seed,
        cap,
        seed_batch,
        parent_nodes: n,
        batches: 0,
        events: Vec::new(),
    };
    if n <= cap {
        return Ok(SampledSubgraph {
            nodes: (0..n).collect(),
            edges: graph.edges.clone(),
            trace,
        });
    }

    let adj = graph.undirected();
    let mut rng = StreamRng::new(rng_seed);
    let mut selected = vec![false; n];
    let mut count = 0usize;
    let mut frontier = VecDeque::new();

    'outer: while count < cap {
        let want = seed_batch.min(cap - count);
        for node in draw_batch(&mut rng, &selected, want) {
            selected[node] = true;
            count += 1;
            frontier.push_back(node);
            trace.events.push(TraceEvent::Seed {
                node,
                batch: trace.batches,
            });
        }
        trace.batches += 1;
        while let Some(u) = frontier.pop_front() {
            for &v in adj.neighbors(u) {
                if count == cap {
                    break 'outer;
                }
                if !selected[v] {
                    selected[v] = true;
                    count += 1;
                    frontier.push_back(v);
                    trace.events.push(TraceEvent::Grow { node: v, via: u });
                }
            }
        }
    }

    let nodes: Vec<usize> = (0..n).filter(|&v| selected[v]).collect();
    let edges = graph
        .edges
        .iter()
        .copied()
        .filter(|&(u, v)| selected[u] && selected[v])
        .collect();
    Ok(SampledSubgraph {
        nodes,
        edges,
        trace,
    })
}
