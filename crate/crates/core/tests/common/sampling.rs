use std::collections::{BTreeSet, VecDeque};

use sentiment_trend::rng::StreamRng;
use sentiment_trend::thread_graph::{MessageGraph, SampledSubgraph, TraceEvent};

pub fn graph(n: usize, edges: &[(usize, usize)]) -> MessageGraph {
    MessageGraph::from_parts(
        "s",
        (0..n).map(|i| format!("m{i}")).collect(),
        edges.to_vec(),
    )
    .unwrap()
}

/// Neighbors of `v` found by scanning the raw edge list.
pub fn naive_neighbors(edges: &[(usize, usize)], v: usize) -> Vec<usize> {
    let set: BTreeSet<usize> = edges
        .iter()
        .filter_map(|&(a, b)| {
            if a == v {
                Some(b)
            } else if b == v {
                Some(a)
            } else {
                None
            }
        })
        .collect();
    set.into_iter().collect()
}

/// Literal re-statement of the sampling rules on plain vectors.
pub fn reference_sample(
    n: usize,
    edges: &[(usize, usize)],
    cap: usize,
    batch: usize,
    seed: u64,
) -> (Vec<usize>, Vec<TraceEvent>) {
    if n <= cap {
        return ((0..n).collect(), Vec::new());
    }
    let mut rng = StreamRng::new(seed);
    let mut selected: Vec<usize> = Vec::new();
    let mut events = Vec::new();
    let mut b = 0;
    while selected.len() < cap {
        let want = batch.min(cap - selected.len());
        let mut queue = VecDeque::new();
        let mut drawn = Vec::new();
        while drawn.len() < want {
            let v = rng.below(n as u64) as usize;
            if !selected.contains(&v) && !drawn.contains(&v) {
                drawn.push(v);
            }
        }
        for v in drawn {
            selected.push(v);
            queue.push_back(v);
            events.push(TraceEvent::Seed { node: v, batch: b });
        }
        b += 1;
        while let Some(u) = queue.pop_front() {
            for v in naive_neighbors(edges, u) {
                if selected.len() == cap {
                    break;
                }
                if !selected.contains(&v) {
                    selected.push(v);
                    queue.push_back(v);
                    events.push(TraceEvent::Grow { node: v, via: u });
                }
            }
            if selected.len() == cap {
                break;
            }
        }
    }
    selected.sort_unstable();
    (selected, events)
}

/// Replays a trace and checks every rule: seeds are fresh, every grown node
/// is fresh and adjacent to an already-selected node.
pub fn replay_is_legal(g: &MessageGraph, s: &SampledSubgraph) -> bool {
    if g.node_count() <= s.trace.cap {
        return s.trace.events.is_empty() && s.nodes == (0..g.node_count()).collect::<Vec<_>>();
    }
    let mut selected = vec![false; g.node_count()];
    for e in &s.trace.events {
        match *e {
            TraceEvent::Seed { node, .. } => {
                if selected[node] {
                    return false;
                }
            }
            TraceEvent::Grow { node, via } => {
                if selected[node]
                    || !selected[via]
                    || !naive_neighbors(g.edges(), via).contains(&node)
                {
                    return false;
                }
            }
        }
        selected[e.node()] = true;
    }
    let replayed: Vec<usize> = (0..g.node_count()).filter(|&v| selected[v]).collect();
    replayed == s.nodes
}
