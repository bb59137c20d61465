use rand::rngs::StdRng;
use rand::RngExt;
use sentiment_trend::embeddings::EmbeddingMatrix;
use sentiment_trend::gat::{
    attention_weights, Direction, GatConfig, GatParams, HeadParams, LayerParams,
};
use sentiment_trend::thread_graph::MessageGraph;

pub fn embeddings(rows: &[Vec<f32>]) -> EmbeddingMatrix {
    let dim = rows.first().map_or(1, |r| r.len());
    EmbeddingMatrix::new(
        (0..rows.len()).map(|i| format!("m{i}")).collect(),
        dim,
        rows.iter().flatten().copied().collect(),
    )
    .unwrap()
}

pub fn random_embeddings(r: &mut StdRng, n: usize, d: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.0f32..1.0)).collect())
        .collect();
    EmbeddingMatrix::new((0..n).map(|i| format!("m{i}")).collect(), d, rows.concat()).unwrap()
}

pub fn one_head(w: &[f64], a: &[f64], bias: &[f64], concat: bool) -> LayerParams {
    LayerParams {
        in_dim: 2,
        out_dim: 2,
        concat,
        heads: vec![HeadParams {
            w: w.to_vec(),
            a: a.to_vec(),
        }],
        bias: bias.to_vec(),
    }
}

// Chain a <- b <- c: b replies to a, c replies to b. Attention over
// successors plus self gives neighborhoods a:{a}, b:{b,a}, c:{c,b}.
pub const CHAIN: [(usize, usize); 2] = [(1, 0), (2, 1)];

pub fn chain_inputs() -> EmbeddingMatrix {
    embeddings(&[vec![1.0, 0.5], vec![-0.5, 1.0], vec![0.25, -0.75]])
}

pub fn small_config(direction: Direction, seed: u64) -> GatConfig {
    GatConfig {
        heads: 2,
        hidden_dim: 3,
        direction,
        init_seed: seed,
        ..GatConfig::default()
    }
}

/// `|analytic - numeric| <= 1e-4 * max(|analytic|, |numeric|)`, with an
/// absolute allowance of 1e-9 for coordinates that are zero up to rounding.
pub fn gradients_agree(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-9
}

/// Smallest distance of any attention score from the rectifier kink at 0.
pub fn kink_margin(params: &GatParams, g: &MessageGraph, x: &EmbeddingMatrix) -> f64 {
    attention_weights(params, g, x)
        .unwrap()
        .iter()
        .flat_map(|m| m.scores.iter().map(|s| s.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Single attention layer over [`CHAIN`] with hand-picked weights.
pub fn chain_single_layer() -> GatParams {
    GatParams {
        negative_slope: 0.2,
        direction: Direction::Successors,
        layers: vec![one_head(
            &[0.5, -0.2, 0.1, 0.3],
            &[0.4, -0.3, 0.2, 0.6],
            &[0.05, -0.05],
            false,
        )],
    }
}

/// Spreadsheet probabilities of [`chain_single_layer`] for all three nodes.
pub const CHAIN_SHEET: [f64; 3] = [0.43782349911420193, 0.5418458112913721, 0.5122902772539779];

pub struct ChainByHand {
    pub pa: f64,
    pub pb: f64,
    pub alpha_bb: f64,
}

/// Nodes a and b of [`chain_single_layer`] worked through by hand.
pub fn chain_by_hand() -> ChainByHand {
    // z = W h
    let zb = [0.5 * -0.5 + -0.2 * 1.0, 0.1 * -0.5 + 0.3 * 1.0]; // (-0.45, 0.25)
    let za = [0.5 * 1.0 + -0.2 * 0.5, 0.1 * 1.0 + 0.3 * 0.5]; // (0.4, 0.25)
    let src_b = 0.4 * zb[0] - 0.3 * zb[1];
    let e_bb = src_b + 0.2 * zb[0] + 0.6 * zb[1];
    let e_ba = src_b + 0.2 * za[0] + 0.6 * za[1];
    let lrelu = |v: f64| if v > 0.0 { v } else { 0.2 * v };
    let (e_bb, e_ba) = (lrelu(e_bb), lrelu(e_ba));
    let alpha_bb = e_bb.exp() / (e_bb.exp() + e_ba.exp());
    let alpha_ba = 1.0 - alpha_bb;
    let l0 = alpha_bb * zb[0] + alpha_ba * za[0] + 0.05;
    let l1 = alpha_bb * zb[1] + alpha_ba * za[1] - 0.05;
    let pb = 1.0 / (1.0 + (l0 - l1).exp());
    // a attends only to itself
    let pa = 1.0 / (1.0 + ((za[0] + 0.05) - (za[1] - 0.05)).exp());
    ChainByHand { pa, pb, alpha_bb }
}
