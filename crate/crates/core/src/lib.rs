//! Campus sentiment trend analysis: corpus assembly, reply-graph sampling,
//! graph attention scoring, probability stacking, and a random-intercept
//! logistic model with Wald inference.

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod gat;
pub mod glmm;
pub mod logistic;
pub mod report;
pub mod rng;
pub mod stacker;
pub mod thread_graph;

pub use error::{Error, Result};
