//! Logistic stacking of the graph-attention and upstream transformer probabilities.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::{bernoulli_loglik, fit_logistic, sigmoid, IrlsOptions};

/// Inputs are clamped to `[EPS, 1 - EPS]` before the logit transform.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Logit,
    Identity,
}

impl Transform {
    pub fn apply(self, p: f64) -> f64 {
        match self {
            Transform::Identity => p,
            Transform::Logit => {
                let q = p.clamp(EPS, 1.0 - EPS);
                (q / (1.0 - q)).ln()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackObservation {
    pub msg_id: String,
    pub p_gat: f64,
    pub p_upstream: f64,
    /// `true` = negative.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub transform: Transform,
    pub threshold: f64,
}

impl StackModel {
    pub fn new(w0: f64, w1: f64, w2: f64, transform: Transform) -> Self {
        Self {
            w0,
            w1,
            w2,
            transform,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.w0, self.w1, self.w2].iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite("stack coefficients".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    fn linear(&self, p_gat: f64, p_upstream: f64) -> f64 {
        self.w0 + self.w1 * self.transform.apply(p_gat) + self.w2 * self.transform.apply(p_upstream)
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let m: Self = serde_json::from_reader(r)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// One row of the predictions table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub msg_id: String,
    pub school_id: String,
    pub year: i32,
    pub p_gat: f64,
    pub p_upstream: f64,
    pub p_stacked: f64,
    /// 1 = negative.
    pub class: u8,
}

impl Prediction {
    pub fn is_negative(&self) -> bool {
        self.class == 1
    }
}

pub fn write_predictions<W: Write>(w: W, rows: &[Prediction]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record([
        "msg_id",
        "school_id",
        "year",
        "p_gat",
        "p_upstream",
        "p_stacked",
        "class",
    ])?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let p: Prediction = row?;
        if p.class > 1 {
            return Err(Error::Invalid(format!(
                "class {} for {:?} is not 0/1",
                p.class, p.msg_id
            )));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackFit {
    pub model: StackModel,
    pub iterations: usize,
    pub deviance: f64,
    pub converged: bool,
    pub separated: bool,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} = {p} outside [0, 1]")))
    }
}

/// Which probability sources enter the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Features {
    Both,
    GatOnly,
    UpstreamOnly,
}

pub fn design(
    observations: &[StackObservation],
    transform: Transform,
    features: Features,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let cols = if features == Features::Both { 3 } else { 2 };
    let mut x = DMatrix::<f64>::zeros(observations.len(), cols);
    let mut y = Vec::with_capacity(observations.len());
    for (i, o) in observations.iter().enumerate() {
        check_prob(o.p_gat, "p_gat")?;
        check_prob(o.p_upstream, "p_upstream")?;
        let label = o
            .label
            .ok_or_else(|| Error::Invalid(format!("training row {:?} has no label", o.msg_id)))?;
        x[(i, 0)] = 1.0;
        match features {
            Features::Both => {
                x[(i, 1)] = transform.apply(o.p_gat);
                x[(i, 2)] = transform.apply(o.p_upstream);
            }
            Features::GatOnly => x[(i, 1)] = transform.apply(o.p_gat),
            Features::UpstreamOnly => x[(i, 1)] = transform.apply(o.p_upstream),
        }
        y.push(label as u8 as f64);
    }
    Ok((x, y))
}

/// Maximum-likelihood fit by IRLS. Perfect separation is reported through
/// `separated`; the coefficients then point along the separating direction.
pub fn fit_stack(observations: &[StackObservation], transform: Transform) -> Result<StackFit> {
    fit_stack_with(observations, transform, Features::Both)
}

pub fn fit_stack_with(
    observations: &[StackObservation],
    transform: Transform,
    features: Features,
) -> Result<StackFit> {
    let (x, y) = design(observations, transform, features)?;
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Invalid(
            "stacker training needs at least one row of each label".into(),
        ));
    }
    let fit = fit_logistic(&x, &y, &IrlsOptions::default()).map_err(|e| match e {
        Error::RankDeficient(cols) => Error::RankDeficient(
            cols.iter()
                .map(|c| match (features, c.as_str()) {
                    (_, "column 0") => "intercept".to_string(),
                    (Features::Both | Features::GatOnly, "column 1") => "p_gat".to_string(),
                    _ => "p_upstream".to_string(),
                })
                .collect(),
        ),
        other => other,
    })?;
    if fit.separated {
        log::warn!("stacker training data are perfectly separated; coefficients diverge");
    }
    let (w1, w2) = match features {
        Features::Both => (fit.coef[1], fit.coef[2]),
        Features::GatOnly => (fit.coef[1], 0.0),
        Features::UpstreamOnly => (0.0, fit.coef[1]),
    };
    Ok(StackFit {
        model: StackModel::new(fit.coef[0], w1, w2, transform),
        iterations: fit.iterations,
        deviance: fit.deviance,
        converged: fit.converged,
        separated: fit.separated,
    })
}

/// Returns `(p_negative, is_negative)`; ties at the threshold are negative.
pub fn predict_stack(model: &StackModel, p_gat: f64, p_upstream: f64) -> Result<(f64, bool)> {
    check_prob(p_gat, "p_gat")?;
    check_prob(p_upstream, "p_upstream")?;
    let p = sigmoid(model.linear(p_gat, p_upstream));
    Ok((p, p >= model.threshold))
}

/// Mean negative log-likelihood of labelled observations under the model.
pub fn log_loss(model: &StackModel, observations: &[StackObservation]) -> Result<f64> {
    deviance_of(model, observations).map(|d| d / (2.0 * observations.len() as f64))
}

pub fn deviance_of(model: &StackModel, observations: &[StackObservation]) -> Result<f64> {
    let mut ll = 0.0;
    for o in observations {
        check_prob(o.p_gat, "p_gat")?;
        check_prob(o.p_upstream, "p_upstream")?;
        let y = o
            .label
            .ok_or_else(|| Error::Invalid(format!("row {:?} has no label", o.msg_id)))?
            as u8 as f64;
        ll += bernoulli_loglik(y, model.linear(o.p_gat, o.p_upstream));
    }
    Ok(-2.0 * ll)
}

/// Coefficients as a vector `(w0, w1, w2)`.
pub fn coefficients(model: &StackModel) -> DVector<f64> {
    DVector::from_vec(vec![model.w0, model.w1, model.w2])
}
