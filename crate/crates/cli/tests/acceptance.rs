//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Known failures are listed in `KNOWN_FAILURES` with the reason; the run
//! succeeds only when the failing set is exactly that list.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::RngExt;
use sentiment_trend::gat::{
    attention_weights, gat_forward, gat_gradient, Direction, GatConfig, GatParams,
};
use sentiment_trend::glmm::{fit_glmm_with, Approximation, GlmmOptions, Z_95};
use sentiment_trend::logistic::{fit_logistic, IrlsOptions};
use sentiment_trend::report::{bh_adjust, PValueSet};
use sentiment_trend::stacker::{
    fit_stack, fit_stack_with, log_loss, predict_stack, Features, StackModel, Transform,
};
use sentiment_trend::thread_graph::sample_capped;
use sentrend::artifacts::{sha256_hex, RunManifest};

use common::attention::{
    chain_by_hand, chain_inputs, chain_single_layer, gradients_agree, kink_margin,
    random_embeddings, small_config, CHAIN, CHAIN_SHEET,
};
use common::sampling::{graph, reference_sample, replay_is_legal};
use common::stacking::{forty_rows, grid_oracle, random_dataset};
use common::table::{table2_set, TABLE2};

/// Criteria that fail on purpose, with the reason.
const KNOWN_FAILURES: [(&str, &str); 1] = [(
    "BH adjustment",
    "printed raw p-values are rounded; ranks 8 to 11 adjust to 18 * 0.394 / 11 = 0.6447 against 0.623/0.624 printed",
)];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sampler_exactness() -> Outcome {
    let mut r = common::rng(31_000);
    let mut slowest = Duration::ZERO;
    for case in 0..100u64 {
        let n = r.random_range(31_000..=60_000);
        let reply = r.random_range(0.3..0.95);
        let g = common::random_reply_graph(&mut r, n, reply);
        let t = Instant::now();
        let s = sample_capped(&g, 30_000, 50, case).map_err(|e| e.to_string())?;
        let dt = t.elapsed();
        slowest = slowest.max(dt);
        check(s.nodes.len() == 30_000, || {
            format!("N = {n}: {} nodes", s.nodes.len())
        })?;
        check(dt < Duration::from_secs(5), || format!("N = {n}: {dt:?}"))?;
    }
    for case in 0..20u64 {
        let n = r.random_range(1..=30_000);
        let g = common::random_reply_graph(&mut r, n, 0.7);
        let s = sample_capped(&g, 30_000, 50, case).map_err(|e| e.to_string())?;
        check(s.nodes == (0..n).collect::<Vec<_>>(), || {
            format!("N = {n} not returned whole")
        })?;
    }
    Ok(format!(
        "100 graphs over the cap, 20 under; slowest {slowest:.2?}"
    ))
}

fn sampler_legality() -> Outcome {
    let mut r = common::rng(1_000);
    for case in 0..1000u64 {
        let n = r.random_range(1..150);
        let reply = r.random_range(0.0..1.0);
        let g = common::random_reply_graph(&mut r, n, reply);
        let cap = r.random_range(1..100);
        let batch = r.random_range(1..=cap);
        let s = sample_capped(&g, cap, batch, case).map_err(|e| e.to_string())?;
        check(replay_is_legal(&g, &s), || {
            format!("case {case}: illegal trace")
        })?;
        let (nodes, events) = reference_sample(n, g.edges(), cap, batch, case);
        check(s.nodes == nodes && s.trace.events == events, || {
            format!("case {case}: differs from the brute-force replay")
        })?;
    }
    Ok("1000 graphs, traces replayed and matched exactly".into())
}

fn gat_correctness() -> Outcome {
    let mut r = common::rng(21);
    let mut graphs = 0;
    for case in 0..60u64 {
        let n = 1 + (case as usize * 13) % 200;
        let g = common::random_reply_graph(&mut r, n, 0.8);
        let x = random_embeddings(&mut r, n, 6);
        let cfg = GatConfig {
            direction: [
                Direction::Successors,
                Direction::Predecessors,
                Direction::Both,
            ][case as usize % 3],
            init_seed: case,
            ..GatConfig::default()
        };
        let params = GatParams::init(&cfg, 6).map_err(|e| e.to_string())?;
        for map in attention_weights(&params, &g, &x).map_err(|e| e.to_string())? {
            let mut sums = vec![0.0; n];
            for &(i, _, a) in &map.entries {
                sums[i] += a;
            }
            for (i, s) in sums.iter().enumerate() {
                check((s - 1.0).abs() < 1e-6, || {
                    format!("case {case} node {i}: row sums to {s}")
                })?;
            }
        }
        graphs += 1;
    }

    let h = 1e-4;
    let (mut checked, mut case) = (0, 0u64);
    while checked < 20 {
        case += 1;
        check(case < 200, || {
            "too few instances away from the rectifier kink".into()
        })?;
        let n = 2 + (case as usize * 7) % 19;
        let g = common::random_reply_graph(&mut r, n, 0.7);
        let x = random_embeddings(&mut r, n, 4);
        let dir = [
            Direction::Successors,
            Direction::Predecessors,
            Direction::Both,
        ][case as usize % 3];
        let mut params = GatParams::init(&small_config(dir, case), 4).map_err(|e| e.to_string())?;
        let mut flat = params.flatten();
        for v in flat.iter_mut() {
            *v += r.random_range(-0.1..0.1);
        }
        params.assign(&flat);
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i % 3 != 2).collect();
        if kink_margin(&params, &g, &x) < 1e-3 {
            continue;
        }
        checked += 1;
        let loss = |p: &GatParams| gat_gradient(p, &g, &x, &labels, &mask).unwrap().loss;
        let analytic = gat_gradient(&params, &g, &x, &labels, &mask)
            .map_err(|e| e.to_string())?
            .gradient
            .flatten();
        let mut probe = params.clone();
        for k in 0..flat.len() {
            let (mut up, mut down) = (flat.clone(), flat.clone());
            up[k] += h;
            down[k] -= h;
            probe.assign(&up);
            let lu = loss(&probe);
            probe.assign(&down);
            let ld = loss(&probe);
            let numeric = (lu - ld) / (2.0 * h);
            check(gradients_agree(analytic[k], numeric), || {
                format!(
                    "instance {case} coordinate {k}: {} vs {numeric}",
                    analytic[k]
                )
            })?;
        }
    }

    let probs = gat_forward(&chain_single_layer(), &graph(3, &CHAIN), &chain_inputs())
        .map_err(|e| e.to_string())?;
    let hand = chain_by_hand();
    let got = &probs.p_negative;
    check(
        (got[0] - hand.pa).abs() < 1e-6 && (got[1] - hand.pb).abs() < 1e-6,
        || format!("3-node pass {got:?} vs hand ({}, {})", hand.pa, hand.pb),
    )?;
    for (p, s) in got.iter().zip(CHAIN_SHEET) {
        check((p - s).abs() < 1e-6, || format!("3-node pass {p} vs {s}"))?;
    }
    Ok(format!(
        "{graphs} graphs stochastic, 20 gradient instances, 3-node pass by hand"
    ))
}

fn glmm_oracle_agreement() -> Outcome {
    let truth = [-1.0, 0.5];
    let (mut recovered, mut slowest) = (0, Duration::ZERO);
    let mut worst_rel: f64 = 0.0;
    for seed in 0..10u64 {
        let d = common::simulate_glmm(500 + seed, 128, 1000, &truth, 0.5);
        let t = Instant::now();
        let lap = fit_glmm_with(&d, &GlmmOptions::default()).map_err(|e| e.to_string())?;
        let quad = fit_glmm_with(
            &d,
            &GlmmOptions {
                approximation: Approximation::Aghq { nodes: 25 },
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let dt = t.elapsed();
        slowest = slowest.max(dt);
        check(dt < Duration::from_secs(120), || {
            format!("design {seed}: {dt:?}")
        })?;
        check(lap.converged && quad.converged, || {
            format!("design {seed}: not converged")
        })?;
        for j in 0..2 {
            let rel = (lap.beta[j] - quad.beta[j]).abs() / quad.beta[j].abs();
            worst_rel = worst_rel.max(rel);
            check(rel <= 5e-3, || {
                format!(
                    "design {seed} coefficient {j}: {} vs {}",
                    lap.beta[j], quad.beta[j]
                )
            })?;
        }
        let covers = |beta: &[f64], se: &[Option<f64>]| {
            (0..2).all(|j| se[j].is_some_and(|s| (beta[j] - truth[j]).abs() <= 3.0 * s))
        };
        if covers(&lap.beta, &lap.se) && covers(&quad.beta, &quad.se) {
            recovered += 1;
        }
    }
    check(recovered >= 9, || {
        format!("truth within 3 SE in {recovered}/10")
    })?;
    Ok(format!(
        "worst relative gap {worst_rel:.2e}, truth within 3 SE in {recovered}/10, slowest design {slowest:.1?}"
    ))
}

fn glmm_degenerate_limit() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let d = common::simulate_glmm(700 + seed, 16, 80, &[-0.3, 0.8, -0.5], 0.6);
        let pooled = fit_logistic(&d.x_matrix(), d.y(), &IrlsOptions::default())
            .map_err(|e| e.to_string())?;
        let fit = fit_glmm_with(
            &d,
            &GlmmOptions {
                fixed_sigma: Some(1e-8),
                grad_tol: 1e-9,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        for (a, b) in fit.beta.iter().zip(&pooled.coef) {
            worst = worst.max((a - b).abs());
            check((a - b).abs() < 1e-6, || {
                format!("design {seed}: {a} vs {b}")
            })?;
        }
    }
    Ok(format!("5 designs, largest difference {worst:.1e}"))
}

fn coverage_simulation() -> Outcome {
    let slope = 0.5;
    let mut covered = 0;
    for seed in 0..200u64 {
        let d = common::simulate_glmm(10_000 + seed, 64, 200, &[-1.0, slope], 0.5);
        let fit = fit_glmm_with(&d, &GlmmOptions::default()).map_err(|e| e.to_string())?;
        let se = fit.se[1].ok_or_else(|| format!("simulation {seed}: no standard error"))?;
        if (fit.beta[1] - slope).abs() <= Z_95 * se {
            covered += 1;
        }
    }
    let rate = covered as f64 / 200.0;
    check((0.91..=0.98).contains(&rate), || {
        format!("coverage {rate:.3}")
    })?;
    Ok(format!("coverage {covered}/200 = {rate:.3}"))
}

fn bh_adjustment() -> Outcome {
    let mut r = common::rng(1000);
    for case in 0..1000 {
        let m = r.random_range(1..40);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if r.random_bool(0.3) {
                    r.random_range(1..20) as f64 / 20.0
                } else {
                    r.random_range(1e-6..1.0)
                }
            })
            .collect();
        let set = PValueSet::new(
            p.iter()
                .enumerate()
                .map(|(i, &v)| (format!("t{i}"), v))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let adj = bh_adjust(&set).map_err(|e| e.to_string())?.values();
        check(adj == common::brute_force_bh(&p), || {
            format!("random set {case} differs from brute force")
        })?;
    }
    let adj = bh_adjust(&table2_set()).map_err(|e| e.to_string())?;
    let enrollment = adj.get("enrollment").unwrap();
    check(format!("{enrollment:.3}") == "0.009", || {
        format!("enrollment adjusts to {enrollment}")
    })?;
    for (a, pa, _) in TABLE2 {
        for (b, pb, _) in TABLE2 {
            if pa <= pb {
                check(adj.get(a) <= adj.get(b), || {
                    format!("{a} and {b} out of order")
                })?;
            }
        }
    }
    let off: Vec<String> = TABLE2
        .iter()
        .filter_map(|&(n, _, printed)| {
            let got = adj.get(n).unwrap();
            ((got - printed).abs() > 0.02).then(|| format!("{n} {got:.4} vs {printed}"))
        })
        .collect();
    check(off.is_empty(), || {
        format!("printed adjusted values beyond 0.02: {}", off.join("; "))
    })?;
    Ok("1000 random sets exact, enrollment 0.009, monotone, printed rows within 0.02".into())
}

fn stacker() -> Outcome {
    let mut r = common::rng(7);
    for case in 0..100 {
        let w = [
            r.random_range(-1.0..1.0),
            r.random_range(-2.0..2.0),
            r.random_range(-2.0..2.0),
        ];
        let rows = random_dataset(&mut r, 120, w);
        let both = fit_stack(&rows, Transform::Logit).map_err(|e| e.to_string())?;
        let l2 = log_loss(&both.model, &rows).map_err(|e| e.to_string())?;
        for f in [Features::GatOnly, Features::UpstreamOnly] {
            let one = fit_stack_with(&rows, Transform::Logit, f).map_err(|e| e.to_string())?;
            let l1 = log_loss(&one.model, &rows).map_err(|e| e.to_string())?;
            check(l2 <= l1, || {
                format!("dataset {case}: {l2} > {l1} for {f:?}")
            })?;
        }
    }
    let rows = forty_rows();
    let fit = fit_stack(&rows, Transform::Logit).map_err(|e| e.to_string())?;
    let oracle = grid_oracle(&rows);
    let got = [fit.model.w0, fit.model.w1, fit.model.w2];
    for (g, o) in got.iter().zip(oracle) {
        check((g - o).abs() < 1e-3, || {
            format!("fit {got:?} vs grid {oracle:?}")
        })?;
    }
    let om = StackModel::new(oracle[0], oracle[1], oracle[2], Transform::Logit);
    for o in &rows {
        let p = predict_stack(&fit.model, o.p_gat, o.p_upstream).unwrap().0;
        let q = predict_stack(&om, o.p_gat, o.p_upstream).unwrap().0;
        check((p - q).abs() < 1e-3, || format!("{}: {p} vs {q}", o.msg_id))?;
    }
    Ok("nested dominance on 100 datasets, 40-row fit within 1e-3 of the grid".into())
}

fn digests(root: &std::path::Path) -> BTreeMap<String, String> {
    support::snapshot(root)
        .into_iter()
        .map(|(n, b)| (n, sha256_hex(&b)))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = support::Dataset::generate(&tmp.path().join("data"), 20, 12, 9);
    let cfg = data.config("");
    let cfg = cfg.to_str().unwrap();
    let run = |stage: &str, out: &std::path::Path| -> Result<(), String> {
        let o = support::run(&[stage, "--config", cfg, "--out", out.to_str().unwrap()]);
        check(o.status.success(), || {
            format!("{stage}: {}", support::stderr(&o))
        })
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run("all", &a)?;
    run("all", &b)?;
    let (da, db) = (digests(&a), digests(&b));
    check(da == db, || {
        let differ: Vec<_> = da
            .iter()
            .filter(|(k, v)| db.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        format!("runs differ in {differ:?}")
    })?;
    let stages = [
        "ingest", "graph", "sample", "score", "stack", "glmm", "report",
    ];
    for stage in stages {
        let m: RunManifest =
            serde_json::from_slice(&std::fs::read(a.join(stage).join("manifest.json")).unwrap())
                .map_err(|e| e.to_string())?;
        for (name, digest) in &m.outputs {
            check(da.get(&format!("{stage}/{name}")) == Some(digest), || {
                format!("{stage}/{name} does not match its manifest")
            })?;
        }
        run(stage, &a)?;
        check(digests(&a) == da, || {
            format!("rerunning {stage} changed artifacts")
        })?;
    }
    Ok(format!(
        "{} artifacts identical across runs and per-stage reruns",
        da.len()
    ))
}

fn full_scale() -> Option<Outcome> {
    None
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("Sampler exactness", sampler_exactness),
        ("Sampler legality", sampler_legality),
        ("GAT correctness", gat_correctness),
        ("GLMM oracle agreement", glmm_oracle_agreement),
        ("GLMM degenerate limit", glmm_degenerate_limit),
        ("Coverage simulation", coverage_simulation),
        ("BH adjustment", bh_adjustment),
        ("Stacker", stacker),
        ("Determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                let known = KNOWN_FAILURES.iter().find(|(n, _)| *n == name);
                match known {
                    Some((_, reason)) => {
                        println!("FAIL  {name}: {why} [known: {reason}] ({secs:.1}s)")
                    }
                    None => println!("FAIL  {name}: {why} ({secs:.1}s)"),
                }
                failed.push(name);
            }
        }
    }
    match full_scale() {
        Some(Ok(d)) => println!("PASS  Full-scale reproduction: {d}"),
        Some(Err(e)) => println!("FAIL  Full-scale reproduction: {e}"),
        None => println!("SKIP  Full-scale reproduction: released data and upstream scores are not part of the workspace"),
    }

    let known: Vec<&str> = KNOWN_FAILURES.iter().map(|(n, _)| *n).collect();
    let unexpected: Vec<_> = failed.iter().filter(|n| !known.contains(n)).collect();
    let fixed: Vec<_> = known.iter().filter(|n| !failed.contains(n)).collect();
    if !unexpected.is_empty() || !fixed.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}; known failures that now pass: {fixed:?}");
        std::process::exit(1);
    }
}
