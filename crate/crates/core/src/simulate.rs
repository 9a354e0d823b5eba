//! Synthetic datasets: the two latent mean curves, AR(1) individual
//! processes, optional survival-channel noise, random censoring and
//! second-half masking.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data_model::{write_file, SubjectSeries};
use crate::error::{Error, Result};
use crate::survival::logit_inv;

/// `50 sin((x − 20)/100) cos((x − 10)/15)`.
pub fn latent_mu_y(x: f64) -> f64 {
    50.0 * ((x - 20.0) / 100.0).sin() * (-(x - 10.0) / 15.0).cos()
}

/// `4 sin((x − 10)/5) cos(x/10)`.
pub fn latent_mu_h(x: f64) -> f64 {
    4.0 * ((x - 10.0) / 5.0).sin() * (x / 10.0).cos()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub n_ticks: usize,
    pub theta_psi: f64,
    pub phi: f64,
    pub sigma_y: f64,
    pub sigma_psi_range: (f64, f64),
    /// Variance of the noise added to the logit hazard.
    pub noise_tau2: f64,
    /// When set, overrides `noise_tau2` with `ratio · φ² · mean(σ²_ψi)`
    /// computed from the realized scales.
    pub noise_ratio: Option<f64>,
    pub censor: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_subjects: 50,
            n_ticks: 25,
            theta_psi: -0.8,
            phi: 0.9,
            sigma_y: 0.1,
            sigma_psi_range: (0.5, 1.0),
            noise_tau2: 0.0,
            noise_ratio: None,
            censor: false,
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Named presets: `sim1`, `sim2`, `sim3` and `table2` (φ = 0.5, noise
    /// ratio 0.1; adjust `noise_ratio` for the other rows).
    pub fn preset(name: &str) -> Result<Self> {
        let base = SimConfig::default();
        let (theta_psi, phi, noise_ratio) = match name {
            "sim1" => (-0.8, 0.9, None),
            "sim2" => (-0.5, -0.3, None),
            "sim3" => (-0.1, 0.01, None),
            "table2" => (-0.8, 0.5, Some(0.1)),
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };
        Ok(SimConfig {
            theta_psi,
            phi,
            noise_ratio,
            ..base
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_psi_range;
        if self.n_subjects < 1 {
            return Err(Error::Config("n_subjects must be at least 1".into()));
        }
        if self.n_ticks < 2 {
            return Err(Error::Config("n_ticks must be at least 2".into()));
        }
        if !(self.theta_psi > -1.0 && self.theta_psi < 1.0) {
            return Err(Error::Config(format!(
                "theta_psi {} outside (-1, 1)",
                self.theta_psi
            )));
        }
        if !(self.sigma_y > 0.0) || !(lo > 0.0) || !(hi >= lo) {
            return Err(Error::Config(
                "sigma_y and sigma_psi_range must be positive".into(),
            ));
        }
        if !(self.noise_tau2 >= 0.0) || self.noise_ratio.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::Config("noise settings must be nonnegative".into()));
        }
        if !self.phi.is_finite() {
            return Err(Error::Config("phi must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub gamma: f64,
    pub eta: f64,
    pub sigma_psi: f64,
}

/// One latent snapshot per subject and tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub subject_id: String,
    pub tick: i64,
    pub mu_y: f64,
    pub mu_h: f64,
    pub psi: f64,
    pub lambda: f64,
    /// Noise-free longitudinal mean `μ_y + γ_i + ψ_i`.
    pub y_true: f64,
    /// Logit hazard including any injected noise.
    pub h_true: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: SimConfig,
    /// Realized survival-channel noise variance.
    pub noise_tau2: f64,
    pub subjects: Vec<SubjectTruth>,
    pub rows: Vec<TruthRow>,
}

impl TruthRecord {
    pub fn rows_for<'a>(&'a self, subject_id: &'a str) -> impl Iterator<Item = &'a TruthRow> + 'a {
        self.rows.iter().filter(move |r| r.subject_id == subject_id)
    }

    pub fn row(&self, subject_id: &str, tick: i64) -> Option<&TruthRow> {
        self.rows
            .iter()
            .find(|r| r.subject_id == subject_id && r.tick == tick)
    }

    pub fn mean_sigma2_psi(&self) -> f64 {
        self.subjects
            .iter()
            .map(|s| s.sigma_psi * s.sigma_psi)
            .sum::<f64>()
            / self.subjects.len() as f64
    }
}

pub fn subject_id(i: usize) -> String {
    format!("s{:03}", i + 1)
}

/// Draws a full dataset on ticks `1..=n_ticks`, both channels observed at
/// every tick.
pub fn simulate_dataset<R: Rng + ?Sized>(
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<(Vec<SubjectSeries>, TruthRecord)> {
    cfg.validate()?;
    let (lo, hi) = cfg.sigma_psi_range;
    let ticks: Vec<i64> = (1..=cfg.n_ticks as i64).collect();
    let mu_y: Vec<f64> = ticks.iter().map(|&t| latent_mu_y(t as f64)).collect();
    let mu_h: Vec<f64> = ticks.iter().map(|&t| latent_mu_h(t as f64)).collect();

    let mut subjects_truth = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let sigma_psi = if hi > lo {
            Uniform::new(lo, hi).expect("validated range").sample(rng)
        } else {
            lo
        };
        let gamma: f64 = rng.sample(StandardNormal);
        subjects_truth.push(SubjectTruth {
            subject_id: subject_id(i),
            gamma,
            eta: 0.0,
            sigma_psi,
        });
    }
    let mean_s2 = subjects_truth
        .iter()
        .map(|s| s.sigma_psi * s.sigma_psi)
        .sum::<f64>()
        / cfg.n_subjects as f64;
    let tau2 = match cfg.noise_ratio {
        Some(r) => r * cfg.phi * cfg.phi * mean_s2,
        None => cfg.noise_tau2,
    };

    let rho = cfg.theta_psi;
    let innov = (1.0 - rho * rho).sqrt();
    let mut series = Vec::with_capacity(cfg.n_subjects);
    let mut rows = Vec::with_capacity(cfg.n_subjects * cfg.n_ticks);
    for st in &subjects_truth {
        let mut psi = Vec::with_capacity(cfg.n_ticks);
        let mut prev = 0.0;
        for k in 0..cfg.n_ticks {
            let z: f64 = rng.sample(StandardNormal);
            let v = if k == 0 {
                st.sigma_psi * z
            } else {
                rho * prev + innov * st.sigma_psi * z
            };
            psi.push(v);
            prev = v;
        }
        let mut y = Vec::with_capacity(cfg.n_ticks);
        let mut r = Vec::with_capacity(cfg.n_ticks);
        for k in 0..cfg.n_ticks {
            let y_true = mu_y[k] + st.gamma + psi[k];
            let e: f64 = rng.sample(StandardNormal);
            y.push(y_true + cfg.sigma_y * e);
            let tau = if tau2 > 0.0 {
                tau2.sqrt() * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let h = st.eta + mu_h[k] + cfg.phi * psi[k] + tau;
            let lambda = logit_inv(h);
            r.push(u8::from(rng.random::<f64>() < lambda));
            rows.push(TruthRow {
                subject_id: st.subject_id.clone(),
                tick: ticks[k],
                mu_y: mu_y[k],
                mu_h: mu_h[k],
                psi: psi[k],
                lambda,
                y_true,
                h_true: h,
            });
        }
        series.push(SubjectSeries::new(
            st.subject_id.clone(),
            ticks.clone(),
            y,
            ticks.clone(),
            r,
        )?);
    }
    let truth = TruthRecord {
        config: cfg.clone(),
        noise_tau2: tau2,
        subjects: subjects_truth,
        rows,
    };
    let series = if cfg.censor {
        apply_censoring(&series, rng)
    } else {
        series
    };
    Ok((series, truth))
}

/// Drops every record after `cutoff`, keeping the first record of each
/// channel regardless.
pub fn censor_subject(s: &SubjectSeries, cutoff: f64) -> SubjectSeries {
    let keep = |ticks: &[i64]| -> usize {
        let n = ticks.iter().take_while(|&&t| t as f64 <= cutoff).count();
        n.max(usize::from(!ticks.is_empty()))
    };
    let no = keep(&s.obs_ticks);
    let ne = keep(&s.event_ticks);
    SubjectSeries {
        subject_id: s.subject_id.clone(),
        obs_ticks: s.obs_ticks[..no].to_vec(),
        y: s.y[..no].to_vec(),
        event_ticks: s.event_ticks[..ne].to_vec(),
        r: s.r[..ne].to_vec(),
    }
}

/// Censors each subject at `min(max tick, t_c)`, `t_c ~ U(0, 2·max tick)`.
pub fn apply_censoring<R: Rng + ?Sized>(data: &[SubjectSeries], rng: &mut R) -> Vec<SubjectSeries> {
    data.iter()
        .map(|s| match s.last_tick() {
            Some(last) => {
                let t_c = rng.random::<f64>() * 2.0 * last as f64;
                censor_subject(s, t_c.min(last as f64))
            }
            None => s.clone(),
        })
        .collect()
}

/// Splits a subject at the midpoint of its union tick set: the first
/// `ceil(n/2)` ticks stay, the rest are held out.
pub fn split_second_half(s: &SubjectSeries) -> (SubjectSeries, SubjectSeries) {
    let mut union: Vec<i64> = s.obs_ticks.iter().chain(&s.event_ticks).copied().collect();
    union.sort_unstable();
    union.dedup();
    let keep = union.len().div_ceil(2);
    let cutoff = if keep == 0 { i64::MIN } else { union[keep - 1] };
    let split = |ticks: &[i64]| ticks.iter().take_while(|&&t| t <= cutoff).count();
    let no = split(&s.obs_ticks);
    let ne = split(&s.event_ticks);
    let head = SubjectSeries {
        subject_id: s.subject_id.clone(),
        obs_ticks: s.obs_ticks[..no].to_vec(),
        y: s.y[..no].to_vec(),
        event_ticks: s.event_ticks[..ne].to_vec(),
        r: s.r[..ne].to_vec(),
    };
    let tail = SubjectSeries {
        subject_id: s.subject_id.clone(),
        obs_ticks: s.obs_ticks[no..].to_vec(),
        y: s.y[no..].to_vec(),
        event_ticks: s.event_ticks[ne..].to_vec(),
        r: s.r[ne..].to_vec(),
    };
    (head, tail)
}

/// Masks the second half of `round(fraction · n)` randomly chosen subjects.
/// Returns the training set (all subjects, masked ones truncated) and the
/// held-out records of the masked subjects.
pub fn mask_second_half<R: Rng + ?Sized>(
    data: &[SubjectSeries],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<SubjectSeries>, Vec<SubjectSeries>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "mask fraction {fraction} outside (0, 1]"
        )));
    }
    let n_mask = ((fraction * data.len() as f64).round() as usize).min(data.len());
    let mut chosen = sample(rng, data.len(), n_mask).into_vec();
    chosen.sort_unstable();
    let mut train = data.to_vec();
    let mut held = Vec::with_capacity(n_mask);
    for i in chosen {
        let (head, tail) = split_second_half(&data[i]);
        train[i] = head;
        held.push(tail);
    }
    Ok((train, held))
}

pub fn write_truth_csv(path: &Path, truth: &TruthRecord) -> Result<()> {
    let mut out = String::from("subject_id,tick,mu_y,mu_h,psi,lambda,y_true,h_true\n");
    for r in &truth.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.subject_id, r.tick, r.mu_y, r.mu_h, r.psi, r.lambda, r.y_true, r.h_true
        ));
    }
    write_file(path, out.as_bytes())
}

pub fn write_truth_subjects_csv(path: &Path, truth: &TruthRecord) -> Result<()> {
    let mut out = String::from("subject_id,gamma,eta,sigma_psi\n");
    for s in &truth.subjects {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.subject_id, s.gamma, s.eta, s.sigma_psi
        ));
    }
    write_file(path, out.as_bytes())
}

/// Reads a truth CSV written by [`write_truth_csv`].
pub fn read_truth_rows(path: &Path) -> Result<Vec<TruthRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: TruthRow = rec.map_err(|e| Error::format(path, e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}
