//! Gibbs / Metropolis-within-Gibbs sampler for the joint model and its two
//! reduced forms.
//!
//! Every Gaussian block is drawn from its exact conditional through
//! [`gp_posterior_partial`], with the likelihood folded in as independent
//! pseudo-observations. The Bernoulli channel is made conditionally Gaussian
//! by Polya-Gamma augmentation. Kernel hyperparameters are the only
//! non-conjugate blocks; each gets a random-walk Metropolis step on its
//! unconstrained scale.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_model::{build_event_grid, SubjectSeries, TimeGrid};
use crate::error::{Error, Result};
use crate::gp_core::{gp_posterior_partial, mvn_sample};
use crate::kernels::{cov_matrix, whitening_trace_terms, CovMatrix, Factor, KernelSpec};
use crate::polya_gamma::pg_sample;
use crate::priors::{
    jeffreys_theta_logprior, sample_inv_gamma, weighted_shared_theta, CenterPrior, PriorConfig,
    PriorState, PsiScalePrior, ThetaPrior,
};
use crate::survival::logit_inv;

/// Which channels the model carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    #[serde(rename = "jhgp")]
    Jhgp,
    #[serde(rename = "hgp-only")]
    HgpOnly,
    #[serde(rename = "survival-only")]
    SurvivalOnly,
}

impl Mode {
    pub fn has_longitudinal(self) -> bool {
        self != Mode::SurvivalOnly
    }

    pub fn has_survival(self) -> bool {
        self != Mode::HgpOnly
    }

    /// Whether `φ` is a free parameter.
    pub fn samples_phi(self) -> bool {
        self == Mode::Jhgp
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Jhgp => "jhgp",
            Mode::HgpOnly => "hgp-only",
            Mode::SurvivalOnly => "survival-only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jhgp" => Ok(Mode::Jhgp),
            "hgp-only" | "hgp" => Ok(Mode::HgpOnly),
            "survival-only" | "survival" => Ok(Mode::SurvivalOnly),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Target acceptance rate of the adaptive random-walk steps.
    pub target_acceptance: f64,
    /// Lower bound applied to every sampled variance.
    pub variance_floor: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            chains: 1,
            seed: 1,
            target_acceptance: 0.3,
            variance_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub mode: Mode,
    pub mcmc: McmcConfig,
    pub priors: PriorConfig,
    /// Initial hyperparameters are overwritten by the data-driven
    /// initialization unless the matching prior is `fixed`.
    pub kernel_mu_y: KernelSpec,
    pub kernel_mu_h: KernelSpec,
    pub kernel_psi: KernelSpec,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mode: Mode::Jhgp,
            mcmc: McmcConfig::default(),
            priors: PriorConfig::default(),
            kernel_mu_y: KernelSpec::squared_exponential(5.0).with_jitter(1e-6),
            kernel_mu_h: KernelSpec::squared_exponential(5.0).with_jitter(1e-6),
            kernel_psi: KernelSpec::ar1(-0.5),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mcmc;
        if m.iterations == 0 || m.thin == 0 || m.chains == 0 {
            return Err(Error::Config(
                "iterations, thin and chains must be positive".into(),
            ));
        }
        if m.burn_in >= m.iterations {
            return Err(Error::Config(format!(
                "burn_in {} must be below iterations {}",
                m.burn_in, m.iterations
            )));
        }
        if !(m.target_acceptance > 0.0 && m.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        if !(m.variance_floor > 0.0) {
            return Err(Error::Config("variance_floor must be positive".into()));
        }
        self.kernel_mu_y.validate()?;
        self.kernel_mu_h.validate()?;
        self.kernel_psi.validate()?;
        for (name, p) in [
            ("theta_psi", &self.priors.theta_psi),
            ("theta_mu_y", &self.priors.theta_mu_y),
            ("theta_mu_h", &self.priors.theta_mu_h),
        ] {
            if let ThetaPrior::Jeffreys { lower, upper } = p {
                if !(lower < upper) {
                    return Err(Error::Config(format!(
                        "{name}: lower bound must be below upper bound"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A longitudinal observation located on the subject grid and the global grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsPoint {
    pub local: usize,
    pub global: usize,
    pub y: f64,
}

/// One slot of the gap-filled event grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventPoint {
    pub local: usize,
    pub global: usize,
    pub r: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub id: String,
    /// Grid of `ψ_i`: the union of the observation ticks and the event grid.
    pub ticks: Vec<i64>,
    /// Index into [`FitData::shapes`].
    pub shape: usize,
    pub obs: Vec<ObsPoint>,
    pub events: Vec<EventPoint>,
}

impl SubjectData {
    pub fn n(&self) -> usize {
        self.ticks.len()
    }
}

/// Model-ready view of a dataset for one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct FitData {
    pub mode: Mode,
    pub global: TimeGrid,
    pub global_f64: Vec<f64>,
    pub subjects: Vec<SubjectData>,
    /// Distinct subject grids, offset so each starts at 0.
    pub shapes: Vec<Vec<f64>>,
    /// Subjects dropped for lack of data in this mode.
    pub excluded: Vec<String>,
}

impl FitData {
    pub fn new(series: &[SubjectSeries], mode: Mode) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Empty("no subjects".into()));
        }
        struct Raw {
            id: String,
            ticks: Vec<i64>,
            obs: Vec<(i64, f64)>,
            events: Vec<(i64, u8)>,
        }
        let mut raws = Vec::new();
        let mut excluded = Vec::new();
        for s in series {
            s.validate()?;
            let obs: Vec<(i64, f64)> = if mode.has_longitudinal() {
                s.obs_ticks
                    .iter()
                    .copied()
                    .zip(s.y.iter().copied())
                    .collect()
            } else {
                Vec::new()
            };
            if mode.has_longitudinal() && obs.len() < 2 {
                log::warn!(
                    "subject {}: fewer than 2 longitudinal observations, excluded",
                    s.subject_id
                );
                excluded.push(s.subject_id.clone());
                continue;
            }
            let events: Vec<(i64, u8)> = if mode.has_survival() && s.has_events() {
                let grid = build_event_grid(s)?;
                grid.ticks().zip(grid.r.iter().copied()).collect()
            } else {
                Vec::new()
            };
            if mode == Mode::SurvivalOnly && events.is_empty() {
                log::warn!("subject {}: no event records, excluded", s.subject_id);
                excluded.push(s.subject_id.clone());
                continue;
            }
            let mut ticks: Vec<i64> = obs
                .iter()
                .map(|o| o.0)
                .chain(events.iter().map(|e| e.0))
                .collect();
            ticks.sort_unstable();
            ticks.dedup();
            raws.push(Raw {
                id: s.subject_id.clone(),
                ticks,
                obs,
                events,
            });
        }
        if raws.is_empty() {
            return Err(Error::Data(format!(
                "no subject has enough data for mode {}",
                mode.as_str()
            )));
        }
        let global = TimeGrid::new(raws.iter().flat_map(|r| r.ticks.iter().copied()).collect());
        let mut shapes: Vec<Vec<f64>> = Vec::new();
        let mut subjects = Vec::with_capacity(raws.len());
        for raw in raws {
            let t0 = raw.ticks[0];
            let offsets: Vec<f64> = raw.ticks.iter().map(|&t| (t - t0) as f64).collect();
            let shape = match shapes.iter().position(|s| *s == offsets) {
                Some(k) => k,
                None => {
                    shapes.push(offsets);
                    shapes.len() - 1
                }
            };
            let local = |t: i64| raw.ticks.binary_search(&t).expect("tick on subject grid");
            let glob = |t: i64| global.index_of(t).expect("tick on global grid");
            subjects.push(SubjectData {
                obs: raw
                    .obs
                    .iter()
                    .map(|&(t, y)| ObsPoint {
                        local: local(t),
                        global: glob(t),
                        y,
                    })
                    .collect(),
                events: raw
                    .events
                    .iter()
                    .map(|&(t, r)| EventPoint {
                        local: local(t),
                        global: glob(t),
                        r,
                    })
                    .collect(),
                id: raw.id,
                ticks: raw.ticks,
                shape,
            });
        }
        let global_f64 = global.ticks().iter().map(|&t| t as f64).collect();
        Ok(FitData {
            mode,
            global,
            global_f64,
            subjects,
            shapes,
            excluded,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.obs.len()).sum()
    }

    pub fn n_event_slots(&self) -> usize {
        self.subjects.iter().map(|s| s.events.len()).sum()
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    fn span(&self) -> f64 {
        let t = &self.global_f64;
        (t[t.len() - 1] - t[0]).max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub mu_y: DVector<f64>,
    pub mu_h: DVector<f64>,
    pub psi: Vec<DVector<f64>>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub phi: f64,
    pub theta_psi: f64,
    pub theta_mu_y: f64,
    pub theta_mu_h: f64,
    pub sigma2_y: f64,
    pub sigma2_psi: Vec<f64>,
    pub sigma2_mu_y: f64,
    pub sigma2_mu_h: f64,
    /// Polya-Gamma variables, one per event slot.
    pub omega: Vec<Vec<f64>>,
    pub prior: PriorState,
}

impl ModelState {
    /// Logit hazard at event slot `e` of subject `i`.
    pub fn logit_hazard(&self, data: &FitData, i: usize, e: usize) -> f64 {
        let ev = data.subjects[i].events[e];
        self.eta[i] + self.mu_h[ev.global] + self.phi * self.psi[i][ev.local]
    }

    /// `Σ_i ψ_i'ψ_i`.
    pub fn psi_energy(&self) -> f64 {
        self.psi.iter().map(|p| p.norm_squared()).sum()
    }

    pub fn check(&self, data: &FitData) -> Result<()> {
        let nt = data.global.len();
        if self.mu_y.len() != nt || self.mu_h.len() != nt {
            return Err(Error::Dimension(
                "mean processes must span the global grid".into(),
            ));
        }
        for (p, s) in self.psi.iter().zip(&data.subjects) {
            if p.len() != s.n() {
                return Err(Error::Dimension(format!(
                    "psi for subject {} has wrong length",
                    s.id
                )));
            }
        }
        let vars = [self.sigma2_y, self.sigma2_mu_y, self.sigma2_mu_h];
        if vars.iter().chain(&self.sigma2_psi).any(|&v| !(v > 0.0)) {
            return Err(Error::ParameterDomain("variances must be positive".into()));
        }
        Ok(())
    }
}

/// One retained draw. Polya-Gamma variables are not kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub mu_y: Vec<f64>,
    pub mu_h: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub phi: f64,
    pub theta_psi: f64,
    pub theta_mu_y: f64,
    pub theta_mu_h: f64,
    pub sigma2_y: f64,
    pub sigma2_psi: Vec<f64>,
    pub sigma2_mu_y: f64,
    pub sigma2_mu_h: f64,
    pub tau2: f64,
    pub g_gamma: f64,
    pub g_eta: f64,
    pub g_phi: f64,
    pub mu_phi: f64,
}

impl Draw {
    pub fn from_state(state: &ModelState, iteration: usize) -> Self {
        Draw {
            iteration,
            mu_y: state.mu_y.iter().copied().collect(),
            mu_h: state.mu_h.iter().copied().collect(),
            psi: state
                .psi
                .iter()
                .map(|p| p.iter().copied().collect())
                .collect(),
            gamma: state.gamma.clone(),
            eta: state.eta.clone(),
            phi: state.phi,
            theta_psi: state.theta_psi,
            theta_mu_y: state.theta_mu_y,
            theta_mu_h: state.theta_mu_h,
            sigma2_y: state.sigma2_y,
            sigma2_psi: state.sigma2_psi.clone(),
            sigma2_mu_y: state.sigma2_mu_y,
            sigma2_mu_h: state.sigma2_mu_h,
            tau2: state.prior.tau2,
            g_gamma: state.prior.g_gamma,
            g_eta: state.prior.g_eta,
            g_phi: state.prior.g_phi,
            mu_phi: state.prior.mu_phi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub chain: usize,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Post-burn-in acceptance rate of each Metropolis block.
    pub acceptance: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub meta: ChainMeta,
    pub draws: Vec<Draw>,
}

/// Grid layout a draw's vectors refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectLayout {
    pub id: String,
    pub ticks: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub mode: Mode,
    pub global_ticks: Vec<i64>,
    pub subjects: Vec<SubjectLayout>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn layout(data: &FitData) -> (Vec<i64>, Vec<SubjectLayout>) {
        let subjects = data
            .subjects
            .iter()
            .map(|s| SubjectLayout {
                id: s.id.clone(),
                ticks: s.ticks.clone(),
            })
            .collect();
        (data.global.ticks().to_vec(), subjects)
    }

    /// All retained draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Counter {
    accepted: usize,
    proposed: usize,
}

impl Counter {
    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Adaptive random-walk state for one hyperparameter.
#[derive(Clone, Debug)]
struct Walk {
    log_step: f64,
    batch: Counter,
    batches: usize,
    kept: Counter,
}

impl Walk {
    fn new(step: f64) -> Self {
        Walk {
            log_step: step.ln(),
            batch: Counter::default(),
            batches: 0,
            kept: Counter::default(),
        }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn record(&mut self, accepted: bool, adapting: bool, target: f64) {
        let c = if adapting {
            &mut self.batch
        } else {
            &mut self.kept
        };
        c.proposed += 1;
        c.accepted += usize::from(accepted);
        if adapting && self.batch.proposed == ADAPT_BATCH {
            self.batches += 1;
            let gain = (1.0 / (self.batches as f64).sqrt()).min(0.5);
            self.log_step += 2.0 * gain * (self.batch.rate() - target);
            self.log_step = self.log_step.clamp(-8.0, 2.0);
            self.batch = Counter::default();
        }
    }
}

const ADAPT_BATCH: usize = 50;

/// Which mean process a block refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Longitudinal,
    Survival,
}

/// Sampler for one dataset and configuration. Per-block update methods are
/// public so each conditional can be exercised alone.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    pub data: FitData,
    pub cfg: FitConfig,
    walks: BTreeMap<&'static str, Walk>,
    psi_mh: Counter,
    adapting: bool,
}

impl GibbsSampler {
    pub fn new(data: FitData, cfg: FitConfig) -> Result<Self> {
        cfg.validate()?;
        let mut walks = BTreeMap::new();
        for name in ["theta_psi", "theta_mu_y", "theta_mu_h"] {
            walks.insert(name, Walk::new(0.3));
        }
        Ok(GibbsSampler {
            data,
            cfg,
            walks,
            psi_mh: Counter::default(),
            adapting: true,
        })
    }

    pub fn mode(&self) -> Mode {
        self.data.mode
    }

    fn floor(&self) -> f64 {
        self.cfg.mcmc.variance_floor
    }

    pub fn psi_kernel(&self, state: &ModelState) -> KernelSpec {
        let k = &self.cfg.kernel_psi;
        if k.hyper().is_some() {
            k.with_hyper(state.theta_psi)
        } else {
            k.anchored(0.0)
        }
    }

    pub fn mean_kernel(&self, state: &ModelState, ch: Channel) -> KernelSpec {
        let (k, theta) = match ch {
            Channel::Longitudinal => (&self.cfg.kernel_mu_y, state.theta_mu_y),
            Channel::Survival => (&self.cfg.kernel_mu_h, state.theta_mu_h),
        };
        if k.hyper().is_some() {
            k.with_hyper(theta)
        } else {
            k.clone()
        }
    }

    /// Scale of `τ`'s half-Cauchy prior.
    fn tau_scale2(&self, state: &ModelState) -> f64 {
        match (&self.cfg.priors.psi_scale, self.mode().has_longitudinal()) {
            (_, true) => state.sigma2_y,
            (PsiScalePrior::HalfCauchy { tau_scale }, false) => tau_scale * tau_scale,
            (PsiScalePrior::Fixed { .. }, false) => 1.0,
        }
    }

    fn half_cauchy_scales(&self) -> bool {
        matches!(self.cfg.priors.psi_scale, PsiScalePrior::HalfCauchy { .. })
    }

    /// Data-driven starting point.
    pub fn init_state(&self) -> Result<ModelState> {
        let d = &self.data;
        let nt = d.global.len();
        let m = d.subjects.len();
        let floor = self.floor();

        let mut sum = vec![0.0; nt];
        let mut cnt = vec![0usize; nt];
        for s in &d.subjects {
            for o in &s.obs {
                sum[o.global] += o.y;
                cnt[o.global] += 1;
            }
        }
        let mu_y = DVector::from_fn(nt, |k, _| {
            if cnt[k] > 0 {
                sum[k] / cnt[k] as f64
            } else {
                0.0
            }
        });

        let mut gamma = vec![0.0; m];
        let mut psi = Vec::with_capacity(m);
        for (i, s) in d.subjects.iter().enumerate() {
            if !s.obs.is_empty() {
                gamma[i] =
                    s.obs.iter().map(|o| o.y - mu_y[o.global]).sum::<f64>() / s.obs.len() as f64;
            }
            let mut p = DVector::zeros(s.n());
            for o in &s.obs {
                p[o.local] = o.y - mu_y[o.global] - gamma[i];
            }
            psi.push(p);
        }

        let has_y = d.mode.has_longitudinal();
        let sigma2_psi: Vec<f64> = d
            .subjects
            .iter()
            .zip(&psi)
            .map(|(s, p)| {
                if has_y {
                    (p.norm_squared() / s.obs.len().max(1) as f64).max(floor)
                } else {
                    1.0
                }
            })
            .collect();
        let mean_s2 = sigma2_psi.iter().sum::<f64>() / m as f64;
        let sigma2_y = match self.cfg.priors.sigma2_y.fixed_value() {
            Some(v) => v,
            None => (0.1 * mean_s2).max(floor),
        };
        let sigma2_psi = match self.cfg.priors.psi_scale {
            PsiScalePrior::Fixed { sigma2 } => vec![sigma2; m],
            _ => sigma2_psi,
        };

        let var_mu = {
            let mean = mu_y.mean();
            mu_y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nt as f64
        };
        let sigma2_mu_y = self
            .cfg
            .priors
            .sigma2_mu_y
            .fixed_value()
            .unwrap_or(var_mu.max(floor));
        let sigma2_mu_h = self.cfg.priors.sigma2_mu_h.fixed_value().unwrap_or(1.0);

        let init_theta = |k: &KernelSpec, p: &ThetaPrior, quarter_span: bool| -> f64 {
            match (k.hyper(), p) {
                (Some(v), ThetaPrior::Fixed) => v,
                (Some(v), ThetaPrior::Jeffreys { lower, upper }) => {
                    let want = if quarter_span { 0.25 * d.span() } else { -0.5 };
                    let want = if want > *lower && want < *upper {
                        want
                    } else {
                        v
                    };
                    if want > *lower && want < *upper {
                        want
                    } else {
                        0.5 * (lower + upper)
                    }
                }
                (None, _) => f64::NAN,
            }
        };
        let theta_psi = init_theta(&self.cfg.kernel_psi, &self.cfg.priors.theta_psi, false);
        let theta_mu_y = init_theta(&self.cfg.kernel_mu_y, &self.cfg.priors.theta_mu_y, true);
        let theta_mu_h = init_theta(&self.cfg.kernel_mu_h, &self.cfg.priors.theta_mu_h, true);

        let n_bar = d.subjects.iter().map(|s| s.n() as f64).sum::<f64>() / m as f64;
        let g_gamma = self.cfg.priors.g_gamma.fixed_value().unwrap_or_else(|| {
            let q: f64 = d
                .subjects
                .iter()
                .zip(&gamma)
                .map(|(s, g)| s.n() as f64 * g * g)
                .sum::<f64>()
                / m as f64;
            (q / sigma2_y).max(1.0)
        });
        let g_eta = self.cfg.priors.g_eta.fixed_value().unwrap_or(n_bar);
        let g_phi = self
            .cfg
            .priors
            .g_phi
            .fixed_value()
            .unwrap_or((d.n_event_slots() as f64).max(1.0));
        let mu_phi = match self.cfg.priors.mu_phi {
            CenterPrior::Fixed { value } => value,
            CenterPrior::Flat => 0.0,
        };
        let phi = if d.mode == Mode::SurvivalOnly {
            1.0
        } else {
            0.0
        };

        let state = ModelState {
            mu_y,
            mu_h: DVector::zeros(nt),
            psi,
            gamma,
            eta: vec![0.0; m],
            phi,
            theta_psi,
            theta_mu_y,
            theta_mu_h,
            sigma2_y,
            sigma2_psi: sigma2_psi.clone(),
            sigma2_mu_y,
            sigma2_mu_h,
            omega: d
                .subjects
                .iter()
                .map(|s| vec![0.25; s.events.len()])
                .collect(),
            prior: PriorState {
                tau2: mean_s2.max(floor),
                xi: 1.0,
                a_psi: vec![1.0; m],
                g_gamma,
                g_eta,
                g_phi,
                mu_phi,
            },
        };
        state.check(d)?;
        Ok(state)
    }

    /// One systematic scan. `iteration` only labels errors.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut ModelState,
        rng: &mut R,
        iteration: usize,
    ) -> Result<()> {
        let wrap = |block: &'static str| {
            move |e: Error| Error::Sweep {
                block,
                iteration,
                source: Box::new(e),
            }
        };
        let mode = self.mode();
        if mode.has_survival() {
            self.update_omega(state, rng);
        }
        if mode.has_longitudinal() {
            self.update_mean(state, Channel::Longitudinal, rng)
                .map_err(wrap("mu_y"))?;
        }
        if mode.has_survival() {
            self.update_mean(state, Channel::Survival, rng)
                .map_err(wrap("mu_h"))?;
        }
        for i in 0..self.data.subjects.len() {
            self.update_psi(state, i, rng).map_err(wrap("psi"))?;
        }
        if mode.has_longitudinal() {
            self.update_gamma(state, rng);
        }
        if mode.has_survival() {
            self.update_eta(state, rng);
        }
        if mode.samples_phi() {
            self.update_phi(state, rng);
        }
        if mode.has_longitudinal() {
            self.update_sigma2_y(state, rng);
        }
        self.update_psi_scales(state, rng)
            .map_err(wrap("sigma2_psi"))?;
        if mode.has_longitudinal() {
            self.update_sigma2_mean(state, Channel::Longitudinal, rng)
                .map_err(wrap("sigma2_mu_y"))?;
        }
        if mode.has_survival() {
            self.update_sigma2_mean(state, Channel::Survival, rng)
                .map_err(wrap("sigma2_mu_h"))?;
        }
        self.update_theta_psi(state, rng)
            .map_err(wrap("theta_psi"))?;
        if mode.has_longitudinal() {
            self.update_theta_mean(state, Channel::Longitudinal, rng)
                .map_err(wrap("theta_mu_y"))?;
        }
        if mode.has_survival() {
            self.update_theta_mean(state, Channel::Survival, rng)
                .map_err(wrap("theta_mu_h"))?;
        }
        self.update_g(state, rng);
        Ok(())
    }

    pub fn update_omega<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) {
        for i in 0..self.data.subjects.len() {
            for e in 0..self.data.subjects[i].events.len() {
                let h = state.logit_hazard(&self.data, i, e);
                state.omega[i][e] = pg_sample(h, rng);
            }
        }
    }

    /// Per-tick pseudo-observations `(value, noise variance)` summarizing the
    /// likelihood of one mean process given everything else.
    pub fn mean_pseudo_obs(
        &self,
        state: &ModelState,
        ch: Channel,
    ) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let nt = self.data.global.len();
        let mut prec = vec![0.0; nt];
        let mut lin = vec![0.0; nt];
        for (i, s) in self.data.subjects.iter().enumerate() {
            match ch {
                Channel::Longitudinal => {
                    for o in &s.obs {
                        prec[o.global] += 1.0 / state.sigma2_y;
                        lin[o.global] +=
                            (o.y - state.gamma[i] - state.psi[i][o.local]) / state.sigma2_y;
                    }
                }
                Channel::Survival => {
                    for (e, ev) in s.events.iter().enumerate() {
                        let w = state.omega[i][e];
                        let off = state.eta[i] + state.phi * state.psi[i][ev.local];
                        prec[ev.global] += w;
                        lin[ev.global] += (ev.r as f64 - 0.5) - w * off;
                    }
                }
            }
        }
        let mut idx = Vec::new();
        let mut val = Vec::new();
        let mut noise = Vec::new();
        for k in 0..nt {
            if prec[k] > 0.0 {
                idx.push(k);
                val.push(lin[k] / prec[k]);
                noise.push(1.0 / prec[k]);
            }
        }
        (idx, val, noise)
    }

    pub fn mean_prior_cov(&self, state: &ModelState, ch: Channel) -> Result<CovMatrix> {
        let scale = match ch {
            Channel::Longitudinal => state.sigma2_mu_y,
            Channel::Survival => state.sigma2_mu_h,
        };
        cov_matrix(&self.mean_kernel(state, ch), &self.data.global_f64, scale)
    }

    pub fn mean_conditional(
        &self,
        state: &ModelState,
        ch: Channel,
    ) -> Result<crate::gp_core::GaussianDist> {
        let prior = self.mean_prior_cov(state, ch)?;
        let (idx, val, noise) = self.mean_pseudo_obs(state, ch);
        let zero = DVector::zeros(self.data.global.len());
        gp_posterior_partial(&zero, prior.matrix(), &idx, &val, &noise)
    }

    pub fn update_mean<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        ch: Channel,
        rng: &mut R,
    ) -> Result<()> {
        let post = self.mean_conditional(state, ch)?;
        let draw = mvn_sample(&post, rng)?;
        match ch {
            Channel::Longitudinal => state.mu_y = draw,
            Channel::Survival => state.mu_h = draw,
        }
        Ok(())
    }

    /// Diagonal precision and linear term of subject `i`'s likelihood in
    /// `ψ_i`, including the Gaussian part of the association prior.
    pub fn psi_likelihood_terms(&self, state: &ModelState, i: usize) -> (Vec<f64>, Vec<f64>) {
        let s = &self.data.subjects[i];
        let n = s.n();
        let c = if self.mode().samples_phi() {
            let d = state.phi - state.prior.mu_phi;
            d * d / state.prior.g_phi
        } else {
            0.0
        };
        let mut a = vec![c; n];
        let mut b = vec![0.0; n];
        for o in &s.obs {
            a[o.local] += 1.0 / state.sigma2_y;
            b[o.local] += (o.y - state.gamma[i] - state.mu_y[o.global]) / state.sigma2_y;
        }
        for (e, ev) in s.events.iter().enumerate() {
            let w = state.omega[i][e];
            let off = state.eta[i] + state.mu_h[ev.global];
            a[ev.local] += state.phi * state.phi * w;
            b[ev.local] += state.phi * ((ev.r as f64 - 0.5) - w * off);
        }
        (a, b)
    }

    pub fn psi_prior_cov(&self, state: &ModelState, i: usize) -> Result<CovMatrix> {
        let s = &self.data.subjects[i];
        cov_matrix(
            &self.psi_kernel(state),
            &self.data.shapes[s.shape],
            state.sigma2_psi[i],
        )
    }

    /// Gaussian part of `ψ_i`'s conditional. In the joint mode the exact
    /// conditional carries an extra `(Σψ'ψ)^{1/2}` factor from the
    /// association prior, handled by the Metropolis correction in
    /// [`update_psi`](Self::update_psi).
    pub fn psi_conditional(
        &self,
        state: &ModelState,
        i: usize,
    ) -> Result<crate::gp_core::GaussianDist> {
        let prior = self.psi_prior_cov(state, i)?;
        let (a, b) = self.psi_likelihood_terms(state, i);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        let mut noise = Vec::new();
        for j in 0..a.len() {
            if a[j] > 0.0 {
                idx.push(j);
                val.push(b[j] / a[j]);
                noise.push(1.0 / a[j]);
            }
        }
        let zero = DVector::zeros(a.len());
        gp_posterior_partial(&zero, prior.matrix(), &idx, &val, &noise)
    }

    pub fn update_psi<R: Rng + ?Sized>(
        &mut self,
        state: &mut ModelState,
        i: usize,
        rng: &mut R,
    ) -> Result<()> {
        let post = self.psi_conditional(state, i)?;
        let proposal = mvn_sample(&post, rng)?;
        if !self.mode().samples_phi() {
            state.psi[i] = proposal;
            return Ok(());
        }
        let s_old = state.psi_energy();
        let s_new = s_old - state.psi[i].norm_squared() + proposal.norm_squared();
        let log_ratio = 0.5 * (s_new.ln() - s_old.ln());
        let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
        if !self.adapting {
            self.psi_mh.proposed += 1;
            self.psi_mh.accepted += usize::from(accept);
        }
        if accept {
            state.psi[i] = proposal;
        }
        Ok(())
    }

    /// `(mean, variance)` of `γ_i`'s conditional.
    pub fn gamma_conditional(&self, state: &ModelState, i: usize) -> (f64, f64) {
        let s = &self.data.subjects[i];
        let resid: f64 = s
            .obs
            .iter()
            .map(|o| o.y - state.mu_y[o.global] - state.psi[i][o.local])
            .sum();
        let prec = s.obs.len() as f64 + s.n() as f64 / state.prior.g_gamma;
        (resid / prec, state.sigma2_y / prec)
    }

    pub fn update_gamma<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) {
        for i in 0..self.data.subjects.len() {
            let (m, v) = self.gamma_conditional(state, i);
            state.gamma[i] = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }

    pub fn eta_conditional(&self, state: &ModelState, i: usize) -> (f64, f64) {
        let s = &self.data.subjects[i];
        let mut prec = s.n() as f64 / state.prior.g_eta;
        let mut lin = 0.0;
        for (e, ev) in s.events.iter().enumerate() {
            let w = state.omega[i][e];
            let off = state.mu_h[ev.global] + state.phi * state.psi[i][ev.local];
            prec += w;
            lin += (ev.r as f64 - 0.5) - w * off;
        }
        (lin / prec, 1.0 / prec)
    }

    pub fn update_eta<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) {
        for i in 0..self.data.subjects.len() {
            let (m, v) = self.eta_conditional(state, i);
            state.eta[i] = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }

    pub fn phi_conditional(&self, state: &ModelState) -> (f64, f64) {
        let s_energy = state.psi_energy();
        let prec0 = s_energy / state.prior.g_phi;
        let mut prec = prec0;
        let mut lin = prec0 * state.prior.mu_phi;
        for (i, s) in self.data.subjects.iter().enumerate() {
            for (e, ev) in s.events.iter().enumerate() {
                let w = state.omega[i][e];
                let p = state.psi[i][ev.local];
                let off = state.eta[i] + state.mu_h[ev.global];
                prec += w * p * p;
                lin += p * ((ev.r as f64 - 0.5) - w * off);
            }
        }
        (lin / prec, 1.0 / prec)
    }

    pub fn update_phi<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) {
        let (m, v) = self.phi_conditional(state);
        state.phi = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
    }

    pub fn update_sigma2_y<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) {
        let Some((a0, b0)) = self.cfg.priors.sigma2_y.ig_terms(self.data.n_obs() as f64) else {
            return;
        };
        let mut sse = 0.0;
        let mut shrink = 0.0;
        for (i, s) in self.data.subjects.iter().enumerate() {
            for o in &s.obs {
                let r = o.y - state.gamma[i] - state.mu_y[o.global] - state.psi[i][o.local];
                sse += r * r;
            }
            shrink += s.n() as f64 * state.gamma[i] * state.gamma[i];
        }
        let m = self.data.subjects.len() as f64;
        let mut shape = a0 + 0.5 * (self.data.n_obs() as f64 + m);
        let mut scale = b0 + 0.5 * sse + 0.5 * shrink / state.prior.g_gamma;
        if self.half_cauchy_scales() {
            shape += 0.5;
            scale += 1.0 / state.prior.xi;
        }
        state.sigma2_y = sample_inv_gamma(shape, scale, rng).max(self.floor());
    }

    /// `ψ_i' V⁻¹ ψ_i` for every subject under kernel `k`, with the log
    /// determinant and `tr(U²)` of each subject's correlation matrix.
    fn psi_quadratics(
        &self,
        state: &ModelState,
        k: &KernelSpec,
        need_traces: bool,
    ) -> Result<Vec<(f64, f64, f64)>> {
        let mut per_shape: Vec<Option<(Factor, f64)>> = vec![None; self.data.shapes.len()];
        let mut out = Vec::with_capacity(self.data.subjects.len());
        for (i, s) in self.data.subjects.iter().enumerate() {
            if per_shape[s.shape].is_none() {
                let grid = &self.data.shapes[s.shape];
                let v = cov_matrix(k, grid, 1.0)?;
                let f = v.factor()?.clone();
                let tr = if need_traces {
                    whitening_trace_terms(k, grid)?.tr_u2
                } else {
                    0.0
                };
                per_shape[s.shape] = Some((f, tr));
            }
            let (f, tr) = per_shape[s.shape].as_ref().expect("filled above");
            out.push((f.quad_form(&state.psi[i]), f.log_det(), *tr));
        }
        Ok(out)
    }

    pub fn update_psi_scales<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        rng: &mut R,
    ) -> Result<()> {
        if !self.half_cauchy_scales() {
            return Ok(());
        }
        let floor = self.floor();
        let k = self.psi_kernel(state);
        let quads = self.psi_quadratics(state, &k, false)?;
        let m = self.data.subjects.len();
        for i in 0..m {
            let n = self.data.subjects[i].n() as f64;
            let q = quads[i].0;
            let s2 = sample_inv_gamma(0.5 * (n + 1.0), 0.5 * q + 1.0 / state.prior.a_psi[i], rng)
                .max(floor);
            state.sigma2_psi[i] = s2;
            state.prior.a_psi[i] = sample_inv_gamma(1.0, 1.0 / state.prior.tau2 + 1.0 / s2, rng);
        }
        let inv_a: f64 = state.prior.a_psi.iter().map(|a| 1.0 / a).sum();
        state.prior.tau2 =
            sample_inv_gamma(0.5 * (m as f64 + 1.0), inv_a + 1.0 / state.prior.xi, rng).max(floor);
        let s2 = self.tau_scale2(state);
        state.prior.xi = sample_inv_gamma(1.0, 1.0 / s2 + 1.0 / state.prior.tau2, rng);
        Ok(())
    }

    pub fn update_sigma2_mean<R: Rng + ?Sized>(
        &self,
        state: &mut ModelState,
        ch: Channel,
        rng: &mut R,
    ) -> Result<()> {
        let prior = match ch {
            Channel::Longitudinal => &self.cfg.priors.sigma2_mu_y,
            Channel::Survival => &self.cfg.priors.sigma2_mu_h,
        };
        let nt = self.data.global.len() as f64;
        let Some((a0, b0)) = prior.ig_terms(nt) else {
            return Ok(());
        };
        let k = self.mean_kernel(state, ch);
        let v = cov_matrix(&k, &self.data.global_f64, 1.0)?;
        let mu = match ch {
            Channel::Longitudinal => &state.mu_y,
            Channel::Survival => &state.mu_h,
        };
        let q = v.factor()?.quad_form(mu);
        let s2 = sample_inv_gamma(a0 + 0.5 * nt, b0 + 0.5 * q, rng).max(self.floor());
        match ch {
            Channel::Longitudinal => state.sigma2_mu_y = s2,
            Channel::Survival => state.sigma2_mu_h = s2,
        }
        Ok(())
    }

    /// Log target of `ρ` (up to a constant) given the individual processes.
    pub fn theta_psi_log_target(&self, state: &ModelState, theta: f64) -> Result<f64> {
        let ThetaPrior::Jeffreys { lower, upper } = self.cfg.priors.theta_psi else {
            return Ok(0.0);
        };
        if !(theta > lower && theta < upper) {
            return Ok(f64::NEG_INFINITY);
        }
        let k = self.cfg.kernel_psi.with_hyper(theta);
        let quads = self.psi_quadratics(state, &k, true)?;
        let mut ll = 0.0;
        let mut tr = 0.0;
        for (i, (q, ld, t)) in quads.into_iter().enumerate() {
            let s2 = state.sigma2_psi[i];
            let n = self.data.subjects[i].n() as f64;
            ll += -0.5 * (n * s2.ln() + ld + q / s2);
            tr += t;
        }
        Ok(ll + weighted_shared_theta(tr))
    }

    pub fn mean_theta_log_target(
        &self,
        state: &ModelState,
        ch: Channel,
        theta: f64,
    ) -> Result<f64> {
        let (prior, base, mu, s2) = match ch {
            Channel::Longitudinal => (
                &self.cfg.priors.theta_mu_y,
                &self.cfg.kernel_mu_y,
                &state.mu_y,
                state.sigma2_mu_y,
            ),
            Channel::Survival => (
                &self.cfg.priors.theta_mu_h,
                &self.cfg.kernel_mu_h,
                &state.mu_h,
                state.sigma2_mu_h,
            ),
        };
        let ThetaPrior::Jeffreys { lower, upper } = *prior else {
            return Ok(0.0);
        };
        if !(theta > lower && theta < upper) {
            return Ok(f64::NEG_INFINITY);
        }
        let k = base.with_hyper(theta);
        let grid = &self.data.global_f64;
        let v = cov_matrix(&k, grid, s2)?;
        let f = v.factor()?;
        let ll = -0.5 * (f.log_det() + f.quad_form(mu));
        Ok(ll + jeffreys_theta_logprior(&k, grid))
    }

    fn metropolis<R: Rng + ?Sized>(
        &mut self,
        name: &'static str,
        base: &KernelSpec,
        current: f64,
        rng: &mut R,
        target: impl Fn(&Self, f64) -> Result<f64>,
    ) -> Result<f64> {
        let u0 = base.to_unconstrained(current).expect("tunable kernel");
        let step = self.walks[name].step();
        let u1 = u0 + step * rng.sample::<f64, _>(StandardNormal);
        let (t1, j1) = base.from_unconstrained(u1).expect("tunable kernel");
        let (_, j0) = base.from_unconstrained(u0).expect("tunable kernel");
        let lp1 = target(self, t1)?;
        let accept = if lp1 == f64::NEG_INFINITY || !t1.is_finite() {
            false
        } else {
            let lp0 = target(self, current)?;
            let log_ratio = lp1 + j1 - lp0 - j0;
            log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
        };
        let (adapting, goal) = (self.adapting, self.cfg.mcmc.target_acceptance);
        self.walks
            .get_mut(name)
            .expect("known walk")
            .record(accept, adapting, goal);
        Ok(if accept { t1 } else { current })
    }

    pub fn update_theta_psi<R: Rng + ?Sized>(
        &mut self,
        state: &mut ModelState,
        rng: &mut R,
    ) -> Result<()> {
        if self.cfg.kernel_psi.hyper().is_none() || self.cfg.priors.theta_psi == ThetaPrior::Fixed {
            return Ok(());
        }
        let base = self.cfg.kernel_psi.clone();
        let snapshot = state.clone();
        state.theta_psi = self.metropolis("theta_psi", &base, state.theta_psi, rng, |s, t| {
            s.theta_psi_log_target(&snapshot, t)
        })?;
        Ok(())
    }

    pub fn update_theta_mean<R: Rng + ?Sized>(
        &mut self,
        state: &mut ModelState,
        ch: Channel,
        rng: &mut R,
    ) -> Result<()> {
        let (name, base, prior, current) = match ch {
            Channel::Longitudinal => (
                "theta_mu_y",
                &self.cfg.kernel_mu_y,
                &self.cfg.priors.theta_mu_y,
                state.theta_mu_y,
            ),
            Channel::Survival => (
                "theta_mu_h",
                &self.cfg.kernel_mu_h,
                &self.cfg.priors.theta_mu_h,
                state.theta_mu_h,
            ),
        };
        if base.hyper().is_none() || *prior == ThetaPrior::Fixed {
            return Ok(());
        }
        let base = base.clone();
        let snapshot = state.clone();
        let next = self.metropolis(name, &base, current, rng, |s, t| {
            s.mean_theta_log_target(&snapshot, ch, t)
        })?;
        match ch {
            Channel::Longitudinal => state.theta_mu_y = next,
            Channel::Survival => state.theta_mu_h = next,
        }
        Ok(())
    }

    pub fn update_g<R: Rng + ?Sized>(&self, state: &mut ModelState, rng: &mut R) {
        let mode = self.mode();
        let pri = &self.cfg.priors;
        let m = self.data.subjects.len() as f64;
        if mode.has_longitudinal() {
            if let Some((a0, b0)) = pri.g_gamma.ig_terms(self.data.n_obs() as f64) {
                let q: f64 = self
                    .data
                    .subjects
                    .iter()
                    .zip(&state.gamma)
                    .map(|(s, g)| s.n() as f64 * g * g)
                    .sum();
                state.prior.g_gamma =
                    sample_inv_gamma(a0 + 0.5 * m, b0 + 0.5 * q / state.sigma2_y, rng)
                        .max(self.floor());
            }
        }
        if mode.has_survival() {
            if let Some((a0, b0)) = pri.g_eta.ig_terms(self.data.n_event_slots() as f64) {
                let q: f64 = self
                    .data
                    .subjects
                    .iter()
                    .zip(&state.eta)
                    .map(|(s, e)| s.n() as f64 * e * e)
                    .sum();
                state.prior.g_eta =
                    sample_inv_gamma(a0 + 0.5 * m, b0 + 0.5 * q, rng).max(self.floor());
            }
        }
        if mode.samples_phi() {
            let s_energy = state.psi_energy();
            if pri.mu_phi == CenterPrior::Flat {
                let v = state.prior.g_phi / s_energy;
                state.prior.mu_phi = state.phi + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            if let Some((a0, b0)) = pri.g_phi.ig_terms(self.data.n_event_slots() as f64) {
                let d = state.phi - state.prior.mu_phi;
                state.prior.g_phi =
                    sample_inv_gamma(a0 + 0.5, b0 + 0.5 * s_energy * d * d, rng).max(self.floor());
            }
        }
    }

    /// Ends adaptation: step sizes freeze and acceptance counting starts.
    pub fn freeze_adaptation(&mut self) {
        self.adapting = false;
    }

    /// Post-adaptation acceptance rates of the Metropolis blocks that ran.
    pub fn acceptance_rates(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, w) in &self.walks {
            if w.kept.proposed > 0 {
                out.insert((*name).to_string(), w.kept.rate());
            }
        }
        if self.psi_mh.proposed > 0 {
            out.insert("psi".to_string(), self.psi_mh.rate());
        }
        out
    }
}

/// Runs one chain from the data-driven initial state.
pub fn run_chain(data: &FitData, cfg: &FitConfig, chain: usize, seed: u64) -> Result<ChainDraws> {
    let mut sampler = GibbsSampler::new(data.clone(), cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sampler.init_state()?;
    let m = &cfg.mcmc;
    let mut draws = Vec::with_capacity((m.iterations - m.burn_in) / m.thin);
    for it in 1..=m.iterations {
        if it == m.burn_in + 1 {
            sampler.freeze_adaptation();
        }
        sampler.sweep(&mut state, &mut rng, it)?;
        if it > m.burn_in && (it - m.burn_in) % m.thin == 0 {
            draws.push(Draw::from_state(&state, it));
        }
        if it % 1000 == 0 {
            log::debug!("chain {chain}: iteration {it}");
        }
    }
    Ok(ChainDraws {
        meta: ChainMeta {
            chain,
            seed,
            iterations: m.iterations,
            burn_in: m.burn_in,
            thin: m.thin,
            acceptance: sampler.acceptance_rates(),
        },
        draws,
    })
}

/// Seed of chain `k`.
pub fn chain_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

/// Runs `cfg.mcmc.chains` chains with seeds `seed, seed + 1, …`, concurrently.
pub fn run_chains(data: &FitData, cfg: &FitConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if data.mode != cfg.mode {
        return Err(Error::Config(format!(
            "data prepared for mode {} but configuration says {}",
            data.mode.as_str(),
            cfg.mode.as_str()
        )));
    }
    let n = cfg.mcmc.chains;
    let results: Vec<Result<ChainDraws>> = if n == 1 {
        vec![run_chain(data, cfg, 0, chain_seed(cfg.mcmc.seed, 0))]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|k| scope.spawn(move || run_chain(data, cfg, k, chain_seed(cfg.mcmc.seed, k))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect()
        })
    };
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (global_ticks, subjects) = PosteriorDraws::layout(data);
    Ok(PosteriorDraws {
        mode: data.mode,
        global_ticks,
        subjects,
        chains,
    })
}

/// Prepares the data and runs every chain.
pub fn fit(series: &[SubjectSeries], cfg: &FitConfig) -> Result<(FitData, PosteriorDraws)> {
    let data = FitData::new(series, cfg.mode)?;
    let draws = run_chains(&data, cfg)?;
    Ok((data, draws))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_values(name: impl Into<String>, values: &[f64]) -> Result<SummaryRow> {
    let name = name.into();
    if values.is_empty() {
        return Err(Error::Empty(format!("no draws for {name}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryRow {
        name,
        mean,
        sd,
        lo: quantile_sorted(&sorted, 0.025),
        hi: quantile_sorted(&sorted, 0.975),
    })
}

/// Posterior mean, sd and equal-tailed 95% interval of every scalar
/// parameter the mode samples, then the per-tick mean processes and the
/// baseline hazard `logit_inv(μ_h)`.
pub fn summarize(draws: &PosteriorDraws) -> Result<Vec<SummaryRow>> {
    if draws.is_empty() {
        return Err(Error::Empty("no retained draws".into()));
    }
    let mode = draws.mode;
    let col = |f: &dyn Fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    let mut rows = Vec::new();
    let mut scalar = |name: &str, f: &dyn Fn(&Draw) -> f64| -> Result<()> {
        rows.push(summarize_values(name, &col(f))?);
        Ok(())
    };
    let first = draws.iter().next().expect("nonempty");
    if first.theta_psi.is_finite() {
        scalar("theta_psi", &|d| d.theta_psi)?;
    }
    if mode.samples_phi() {
        scalar("phi", &|d| d.phi)?;
        scalar("g_phi", &|d| d.g_phi)?;
        scalar("mu_phi", &|d| d.mu_phi)?;
    }
    if mode.has_longitudinal() {
        scalar("sigma2_y", &|d| d.sigma2_y)?;
        scalar("sigma2_mu_y", &|d| d.sigma2_mu_y)?;
        if first.theta_mu_y.is_finite() {
            scalar("theta_mu_y", &|d| d.theta_mu_y)?;
        }
        scalar("g_gamma", &|d| d.g_gamma)?;
    }
    if mode.has_survival() {
        scalar("sigma2_mu_h", &|d| d.sigma2_mu_h)?;
        if first.theta_mu_h.is_finite() {
            scalar("theta_mu_h", &|d| d.theta_mu_h)?;
        }
        scalar("g_eta", &|d| d.g_eta)?;
    }
    scalar("tau2", &|d| d.tau2)?;
    for (k, t) in draws.global_ticks.iter().enumerate() {
        if mode.has_longitudinal() {
            rows.push(summarize_values(
                format!("mu_y[{t}]"),
                &col(&|d| d.mu_y[k]),
            )?);
        }
    }
    for (k, t) in draws.global_ticks.iter().enumerate() {
        if mode.has_survival() {
            rows.push(summarize_values(
                format!("mu_h[{t}]"),
                &col(&|d| d.mu_h[k]),
            )?);
            rows.push(summarize_values(
                format!("lambda0[{t}]"),
                &col(&|d| logit_inv(d.mu_h[k])),
            )?);
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("parameter,mean,sd,q2.5,q97.5\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.mean, r.sd, r.lo, r.hi
        ));
    }
    out
}

/// Posterior mean in-sample hazard `λ_i(k)` at every event slot, per subject
/// in data order.
pub fn fitted_hazards(data: &FitData, draws: &PosteriorDraws) -> Result<Vec<Vec<f64>>> {
    if draws.is_empty() {
        return Err(Error::Empty("no retained draws".into()));
    }
    let n = draws.len() as f64;
    let mut out: Vec<Vec<f64>> = data
        .subjects
        .iter()
        .map(|s| vec![0.0; s.events.len()])
        .collect();
    for d in draws.iter() {
        for (i, s) in data.subjects.iter().enumerate() {
            for (e, ev) in s.events.iter().enumerate() {
                let h = d.eta[i] + d.mu_h[ev.global] + d.phi * d.psi[i][ev.local];
                out[i][e] += logit_inv(h) / n;
            }
        }
    }
    Ok(out)
}
