//! Discrete-time relative-risk hazard with a logit link.
//!
//! Arithmetic stays on the logit scale `h` wherever possible; `λ` is only
//! formed for reporting.

use serde::{Deserialize, Serialize};

use crate::data_model::EventGrid;
use crate::error::{Error, Result};

/// Logit-hazard path with its derived hazard probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardPath {
    pub h: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl HazardPath {
    pub fn from_logit(h: Vec<f64>) -> Self {
        let lambda = h.iter().map(|&v| logit_inv(v)).collect();
        HazardPath { h, lambda }
    }
}

/// `exp(h) / (1 + exp(h))`, evaluated in the sign-split form.
pub fn logit_inv(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(h))` without overflow.
pub fn log1p_exp(h: f64) -> f64 {
    if h > 0.0 {
        h + (-h).exp().ln_1p()
    } else {
        h.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood on the logit scale: `Σ r_k h_k − log(1 + e^{h_k})`.
pub fn bernoulli_loglik_logit(r: &[u8], h: &[f64]) -> Result<f64> {
    if r.len() != h.len() {
        return Err(Error::Dimension(format!(
            "{} outcomes for {} logits",
            r.len(),
            h.len()
        )));
    }
    Ok(r.iter()
        .zip(h)
        .map(|(&ri, &hi)| ri as f64 * hi - log1p_exp(hi))
        .sum())
}

/// Log-likelihood of a gap-filled event grid. Each episode contributes the
/// log hazard of its closing event (or the log survival of its censored
/// terminal slot) plus the log survival of every interior slot; summed over
/// episodes this is the independent-Bernoulli form used here.
pub fn episode_loglik(grid: &EventGrid, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} hazards for an event grid of {} slots",
            lambda.len(),
            grid.len()
        )));
    }
    if let Some(bad) = lambda.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::ParameterDomain(format!(
            "hazard {bad} outside (0, 1)"
        )));
    }
    Ok(grid
        .r
        .iter()
        .zip(lambda)
        .map(|(&r, &l)| if r == 1 { l.ln() } else { (-l).ln_1p() })
        .sum())
}

/// Log-likelihood of a gap-filled grid given logit hazards.
pub fn event_grid_loglik_logit(grid: &EventGrid, h: &[f64]) -> Result<f64> {
    if h.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} logits for an event grid of {} slots",
            h.len(),
            grid.len()
        )));
    }
    bernoulli_loglik_logit(&grid.r, h)
}

/// `S(k) = Π_{j≤k} (1 − λ(j))`.
pub fn survival_curve(lambda: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .scan(1.0, |s, &l| {
            *s *= 1.0 - l;
            Some(*s)
        })
        .collect()
}
