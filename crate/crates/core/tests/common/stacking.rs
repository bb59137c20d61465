use rand::rngs::StdRng;
use rand::RngExt;
use sentiment_trend::stacker::StackObservation;

pub fn obs(i: usize, p_gat: f64, p_upstream: f64, label: bool) -> StackObservation {
    StackObservation {
        msg_id: format!("m{i}"),
        p_gat,
        p_upstream,
        label: Some(label),
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Labels drawn from a logistic model on the logit features, so the data are
/// noisy and the likelihood has an interior maximum.
pub fn random_dataset(r: &mut StdRng, n: usize, w: [f64; 3]) -> Vec<StackObservation> {
    loop {
        let rows: Vec<StackObservation> = (0..n)
            .map(|i| {
                let a: f64 = r.random_range(0.02..0.98);
                let b: f64 = r.random_range(0.02..0.98);
                let p = sig(w[0] + w[1] * logit(a) + w[2] * logit(b));
                obs(i, a, b, r.random::<f64>() < p)
            })
            .collect();
        let pos = rows.iter().filter(|o| o.label == Some(true)).count();
        if pos > 2 && pos + 2 < n {
            return rows;
        }
    }
}

/// Negative log-likelihood computed directly from the rows.
pub fn nll(rows: &[StackObservation], w: [f64; 3]) -> f64 {
    rows.iter()
        .map(|o| {
            let p = sig(w[0] + w[1] * logit(o.p_gat) + w[2] * logit(o.p_upstream));
            if o.label == Some(true) {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Dense grid search, re-centred on the best point and shrunk each round.
pub fn grid_oracle(rows: &[StackObservation]) -> [f64; 3] {
    const K: i32 = 12;
    let mut center = [0.0; 3];
    let mut half = 8.0;
    while half > 1e-7 {
        let step = half / K as f64;
        let mut best = (f64::INFINITY, center);
        for i in -K..=K {
            for j in -K..=K {
                for k in -K..=K {
                    let w = [
                        center[0] + i as f64 * step,
                        center[1] + j as f64 * step,
                        center[2] + k as f64 * step,
                    ];
                    let v = nll(rows, w);
                    if v < best.0 {
                        best = (v, w);
                    }
                }
            }
        }
        center = best.1;
        half *= 0.3;
    }
    center
}

pub fn forty_rows() -> Vec<StackObservation> {
    let mut r = super::rng(40);
    random_dataset(&mut r, 40, [0.3, 0.9, 0.6])
}
