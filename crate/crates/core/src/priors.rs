//! Log-prior evaluators and the prior configuration used by the sampler.
//!
//! Evaluators return `f64::NEG_INFINITY` outside their domain instead of
//! failing, so Metropolis steps can reject boundary proposals directly.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::kernels::{whitening_trace_terms, KernelSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Hyperparameters of the shrinkage priors: the half-Cauchy mixing
/// variables and the g-prior scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorState {
    /// Global scale `τ²` of the individual-process scales.
    pub tau2: f64,
    /// Mixing variable of `τ²`.
    pub xi: f64,
    /// Per-subject mixing variables of `σ²_ψi`.
    pub a_psi: Vec<f64>,
    pub g_gamma: f64,
    pub g_eta: f64,
    pub g_phi: f64,
    pub mu_phi: f64,
}

impl PriorState {
    pub fn is_valid(&self) -> bool {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        pos(self.tau2)
            && pos(self.xi)
            && self.a_psi.iter().all(|&a| pos(a))
            && pos(self.g_gamma)
            && pos(self.g_eta)
            && pos(self.g_phi)
            && self.mu_phi.is_finite()
    }
}

/// `0.5·log(tr(U²) − tr(U)²/n) − log σ²`, the reference prior for a GP's
/// `(θ, σ²)` up to a constant.
pub fn jeffreys_gp_logprior(spec: &KernelSpec, grid: &[f64], sigma2: f64) -> f64 {
    if !(sigma2 > 0.0) {
        return f64::NEG_INFINITY;
    }
    match whitening_trace_terms(spec, grid) {
        Ok(t) => {
            let arg = t.centered();
            if arg > 0.0 && arg.is_finite() {
                0.5 * arg.ln() - sigma2.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// The θ-only part of [`jeffreys_gp_logprior`]: `0.5·log(tr(U²) − tr(U)²/n)`.
pub fn jeffreys_theta_logprior(spec: &KernelSpec, grid: &[f64]) -> f64 {
    jeffreys_gp_logprior(spec, grid, 1.0)
}

/// `0.5·log(Σ_i tr(U_i²))` for a correlation structure shared by many subjects.
pub fn jeffreys_shared_theta_logprior(spec: &KernelSpec, grids: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for grid in grids {
        if grid.is_empty() {
            return f64::NEG_INFINITY;
        }
        match whitening_trace_terms(spec, grid) {
            Ok(t) => total += t.tr_u2,
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    weighted_shared_theta(total)
}

pub(crate) fn weighted_shared_theta(total_tr_u2: f64) -> f64 {
    if total_tr_u2 > 0.0 && total_tr_u2.is_finite() {
        0.5 * total_tr_u2.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Half-Cauchy `C⁺(0, scale)` log density.
pub fn half_cauchy_logpdf(x: f64, scale: f64) -> f64 {
    if !(x > 0.0) || !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    (2.0 / (std::f64::consts::PI * scale)).ln() - z.mul_add(z, 1.0).ln()
}

/// Normal log density with variance `g / precision_scale` (pass `g·σ_y²` for
/// the longitudinal intercepts).
pub fn gprior_logpdf(value: f64, center: f64, g: f64, precision_scale: f64) -> f64 {
    if !(g > 0.0) || !(precision_scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let var = g / precision_scale;
    let d = value - center;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Draws from the inverse-gamma distribution with the given shape and scale.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("inverse-gamma shape must be positive");
    scale / g.sample(rng)
}

/// Prior on a positive scale quantity (a variance or a g-prior scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalePrior {
    /// `[x] ∝ 1/x`.
    Jeffreys,
    InverseGamma {
        shape: f64,
        scale: f64,
    },
    /// `g ~ IG(1/2, N/2)` with `N` the number of observations informing the
    /// block (Zellner-Siow); only meaningful for g-prior scales.
    ZellnerSiow,
    Fixed {
        value: f64,
    },
}

impl ScalePrior {
    /// Additive inverse-gamma `(shape, scale)` contributions from the prior
    /// itself; `n_obs` resolves Zellner-Siow. `None` when the quantity is fixed.
    pub fn ig_terms(&self, n_obs: f64) -> Option<(f64, f64)> {
        match *self {
            ScalePrior::Jeffreys => Some((0.0, 0.0)),
            ScalePrior::InverseGamma { shape, scale } => Some((shape, scale)),
            ScalePrior::ZellnerSiow => Some((0.5, 0.5 * n_obs)),
            ScalePrior::Fixed { .. } => None,
        }
    }

    pub fn fixed_value(&self) -> Option<f64> {
        match *self {
            ScalePrior::Fixed { value } => Some(value),
            _ => None,
        }
    }
}

/// Prior on the association's g-prior center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenterPrior {
    Flat,
    Fixed { value: f64 },
}

/// Prior on a kernel hyperparameter. Bounds are in natural units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaPrior {
    Jeffreys { lower: f64, upper: f64 },
    Fixed,
}

/// Prior on the per-subject individual-process scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiScalePrior {
    /// `σ_ψi ~ C⁺(0, τ)`, `τ ~ C⁺(0, s)`; `s` is `σ_y` when a longitudinal
    /// channel exists and `tau_scale` otherwise.
    HalfCauchy {
        tau_scale: f64,
    },
    Fixed {
        sigma2: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma2_y: ScalePrior,
    pub sigma2_mu_y: ScalePrior,
    pub sigma2_mu_h: ScalePrior,
    pub g_gamma: ScalePrior,
    pub g_eta: ScalePrior,
    pub g_phi: ScalePrior,
    pub mu_phi: CenterPrior,
    pub theta_psi: ThetaPrior,
    pub theta_mu_y: ThetaPrior,
    pub theta_mu_h: ThetaPrior,
    pub psi_scale: PsiScalePrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma2_y: ScalePrior::Jeffreys,
            sigma2_mu_y: ScalePrior::Jeffreys,
            sigma2_mu_h: ScalePrior::Jeffreys,
            g_gamma: ScalePrior::Jeffreys,
            g_eta: ScalePrior::Jeffreys,
            g_phi: ScalePrior::ZellnerSiow,
            mu_phi: CenterPrior::Fixed { value: 0.0 },
            theta_psi: ThetaPrior::Jeffreys {
                lower: -1.0,
                upper: 0.0,
            },
            theta_mu_y: ThetaPrior::Jeffreys {
                lower: 0.5,
                upper: 100.0,
            },
            theta_mu_h: ThetaPrior::Jeffreys {
                lower: 0.5,
                upper: 100.0,
            },
            psi_scale: PsiScalePrior::HalfCauchy { tau_scale: 1.0 },
        }
    }
}
