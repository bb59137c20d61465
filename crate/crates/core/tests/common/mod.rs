#![allow(dead_code)]

pub mod attention;
pub mod sampling;
pub mod stacking;
pub mod table;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, Normal};
use sentiment_trend::glmm::{Column, ColumnKind, GlmmDesign};
use sentiment_trend::thread_graph::MessageGraph;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Reply forest: each message after the first replies to a uniformly chosen
/// earlier message with probability `p_reply`.
pub fn random_reply_graph(rng: &mut StdRng, n: usize, p_reply: f64) -> MessageGraph {
    let mut edges = Vec::new();
    for i in 1..n {
        if rng.random_bool(p_reply) {
            edges.push((i, rng.random_range(0..i)));
        }
    }
    MessageGraph::from_parts("s", (0..n).map(|i| format!("m{i}")).collect(), edges).unwrap()
}

pub fn intercept() -> Column {
    Column {
        name: "(Intercept)".into(),
        kind: ColumnKind::Intercept,
    }
}

pub fn numeric(name: &str) -> Column {
    Column {
        name: name.into(),
        kind: ColumnKind::Numeric { mean: 0.0, sd: 1.0 },
    }
}

/// Random-intercept logistic data: intercept plus `beta.len() - 1` standard
/// normal covariates, `z_k ~ N(0, sigma²)`.
pub fn simulate_glmm(
    seed: u64,
    clusters: usize,
    per_cluster: usize,
    beta: &[f64],
    sigma: f64,
) -> GlmmDesign {
    let mut r = rng(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let p = beta.len();
    let mut columns = vec![intercept()];
    columns.extend((1..p).map(|j| numeric(&format!("x{j}"))));
    let mut x = Vec::with_capacity(clusters * per_cluster * p);
    let mut y = Vec::with_capacity(clusters * per_cluster);
    let mut cluster = Vec::with_capacity(clusters * per_cluster);
    for k in 0..clusters {
        let z = sigma * std.sample(&mut r);
        for _ in 0..per_cluster {
            let mut eta = beta[0] + z;
            x.push(1.0);
            for b in &beta[1..] {
                let v: f64 = std.sample(&mut r);
                eta += b * v;
                x.push(v);
            }
            let prob = 1.0 / (1.0 + (-eta).exp());
            y.push(if r.random::<f64>() < prob { 1.0 } else { 0.0 });
            cluster.push(k);
        }
    }
    let ids = (0..clusters).map(|k| format!("school{k:03}")).collect();
    GlmmDesign::new(columns, ids, y, x, cluster, None).unwrap()
}

/// Step-up adjustment computed literally: for each test, the minimum of
/// `m p_(j) / j` over every rank `j` at or above its own, with ties ranked
/// in input order. The result is floored at the raw value, which it can only
/// undercut by rounding.
pub fn brute_force_bh(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let rank = |i: usize| -> usize {
        1 + (0..m)
            .filter(|&j| p[j] < p[i] || (p[j] == p[i] && j < i))
            .count()
    };
    let ranks: Vec<usize> = (0..m).map(rank).collect();
    (0..m)
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..m {
                if ranks[j] >= ranks[i] {
                    best = best.min(m as f64 * p[j] / ranks[j] as f64);
                }
            }
            best.min(1.0).max(p[i])
        })
        .collect()
}
