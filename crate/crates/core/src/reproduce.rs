//! Self-contained reruns of the simulation experiments: simulate, fit, score
//! and compare against the published numbers.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_model::SubjectSeries;
use crate::forecast::{forecast_all, population_only_forecast};
use crate::metrics::{logistic_baseline, roc, score, ScoreMode, ScoreReport};
use crate::sampler::{
    fit, fitted_hazards, summarize, FitConfig, FitData, Mode, PosteriorDraws, SummaryRow,
};
use crate::simulate::{mask_second_half, simulate_dataset, SimConfig, TruthRecord};
use crate::{Error, Result};

pub const EXPERIMENTS: [&str; 4] = ["table1", "table2", "table3", "figure4"];

#[derive(Clone, Debug, PartialEq)]
pub struct ReproOptions {
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for ReproOptions {
    fn default() -> Self {
        ReproOptions {
            seed: 1,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
        }
    }
}

impl ReproOptions {
    fn fit_config(&self, mode: Mode, seed: u64) -> FitConfig {
        let mut cfg = FitConfig {
            mode,
            ..FitConfig::default()
        };
        cfg.mcmc.iterations = self.iterations;
        cfg.mcmc.burn_in = self.burn_in;
        cfg.mcmc.thin = self.thin;
        cfg.mcmc.seed = seed;
        cfg
    }
}

/// One compared quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub label: String,
    pub quantity: String,
    pub reference: String,
    pub obtained: String,
}

/// One pass/fail criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// Plot-ready series, `(file name, CSV text)`.
    pub series: Vec<(String, String)>,
}

impl Report {
    fn new(name: &str) -> Self {
        Report {
            experiment: name.to_string(),
            ..Report::default()
        }
    }

    fn row(
        &mut self,
        label: impl Into<String>,
        quantity: impl Into<String>,
        reference: impl Into<String>,
        obtained: impl Into<String>,
    ) {
        self.rows.push(Row {
            label: label.into(),
            quantity: quantity.into(),
            reference: reference.into(),
            obtained: obtained.into(),
        });
    }

    fn check(&mut self, name: impl Into<String>, detail: impl Into<String>, pass: bool) {
        self.checks.push(Check {
            name: name.into(),
            detail: detail.into(),
            pass,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `experiment,label,quantity,reference,obtained`.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("experiment,label,quantity,reference,obtained\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},\"{}\",\"{}\"",
                self.experiment, r.label, r.quantity, r.reference, r.obtained
            );
        }
        out
    }

    pub fn checks_csv(&self) -> String {
        let mut out = String::from("experiment,check,pass,detail\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{},\"{}\"",
                self.experiment, c.name, c.pass, c.detail
            );
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!("== {} ==\n", self.experiment);
        let w = self
            .rows
            .iter()
            .map(|r| r.label.len() + r.quantity.len() + 1)
            .max()
            .unwrap_or(0);
        for r in &self.rows {
            let key = format!("{} {}", r.label, r.quantity);
            let _ = writeln!(
                out,
                "  {key:w$}  reference {:24}  obtained {}",
                r.reference, r.obtained
            );
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "  [{}] {}: {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        out
    }
}

fn simulate(cfg: &SimConfig) -> Result<(Vec<SubjectSeries>, TruthRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate_dataset(cfg, &mut rng)
}

fn find<'a>(rows: &'a [SummaryRow], name: &str) -> Result<&'a SummaryRow> {
    rows.iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Data(format!("summary has no `{name}` row")))
}

fn ci(r: &SummaryRow) -> String {
    format!("{:.2} ({:.2}, {:.2})", r.mean, r.lo, r.hi)
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Data(format!("stage `{name}` failed: {e}")))
}

/// Three presets, JHGP fit each; θ_ψ within 0.10 and φ within 0.15 of the
/// truth, and Sim-3's φ interval covering 0.
pub fn table1(opts: &ReproOptions) -> Result<Report> {
    let reference = [
        ("sim1", "-0.77 (-0.81, -0.74)", "0.86 (0.69, 1.04)"),
        ("sim2", "-0.53 (-0.48, -0.57)", "-0.28 (-0.44, -0.12)"),
        ("sim3", "-0.09 (-0.14, -0.02)", "0.03 (-0.10, 0.18)"),
    ];
    let mut rep = Report::new("table1");
    for (k, (preset, p_rho, p_phi)) in reference.iter().enumerate() {
        let seed = opts.seed + k as u64;
        let mut sim = SimConfig::preset(preset)?;
        sim.seed = seed;
        let (data, _) = stage("simulate", simulate(&sim))?;
        let (_, draws) = stage("fit", fit(&data, &opts.fit_config(Mode::Jhgp, seed)))?;
        let rows = summarize(&draws)?;
        let rho = find(&rows, "theta_psi")?;
        let phi = find(&rows, "phi")?;
        rep.row(*preset, "theta_psi", *p_rho, ci(rho));
        rep.row(*preset, "phi", *p_phi, ci(phi));
        let d_rho = (rho.mean - sim.theta_psi).abs();
        let d_phi = (phi.mean - sim.phi).abs();
        rep.check(
            format!("{preset} theta_psi"),
            format!("|{:.3} - {}| = {d_rho:.3} <= 0.10", rho.mean, sim.theta_psi),
            d_rho <= 0.10,
        );
        rep.check(
            format!("{preset} phi"),
            format!("|{:.3} - {}| = {d_phi:.3} <= 0.15", phi.mean, sim.phi),
            d_phi <= 0.15,
        );
        if *preset == "sim3" {
            rep.check(
                "sim3 phi interval covers 0",
                format!("({:.3}, {:.3})", phi.lo, phi.hi),
                phi.lo <= 0.0 && phi.hi >= 0.0,
            );
        }
    }
    Ok(rep)
}

pub const TABLE2_RATIOS: [f64; 8] = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
const TABLE2_REFERENCE: [&str; 8] = [
    "0.50 (0.34, 0.65)",
    "0.46 (0.29, 0.58)",
    "0.51 (0.37, 0.66)",
    "0.44 (0.30, 0.58)",
    "0.45 (0.30, 0.60)",
    "0.25 (0.13, 0.37)",
    "0.23 (0.11, 0.36)",
    "0.09 (-0.03, 0.22)",
];

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Noise ladder on the hazard channel. Every rung reuses the same seed, so
/// only the noise scale changes between rungs.
pub fn table2(opts: &ReproOptions) -> Result<Report> {
    let mut rep = Report::new("table2");
    let mut est = Vec::new();
    for (k, &ratio) in TABLE2_RATIOS.iter().enumerate() {
        let mut sim = SimConfig::preset("table2")?;
        sim.noise_ratio = Some(ratio);
        sim.seed = opts.seed;
        let (data, _) = stage("simulate", simulate(&sim))?;
        let (_, draws) = stage("fit", fit(&data, &opts.fit_config(Mode::Jhgp, opts.seed)))?;
        let rows = summarize(&draws)?;
        let phi = find(&rows, "phi")?.clone();
        rep.row(
            format!("ratio {ratio}"),
            "phi",
            TABLE2_REFERENCE[k],
            ci(&phi),
        );
        est.push((ratio, phi));
    }
    let mut series = String::from("ratio,phi_mean,phi_lo,phi_hi\n");
    for (r, p) in &est {
        let _ = writeln!(series, "{r},{},{},{}", p.mean, p.lo, p.hi);
    }
    rep.series.push(("table2_phi.csv".into(), series));

    let low: Vec<&SummaryRow> = est
        .iter()
        .filter(|(r, _)| *r <= 4.0)
        .map(|(_, p)| p)
        .collect();
    let worst = low.iter().map(|p| (p.mean - 0.5).abs()).fold(0.0, f64::max);
    rep.check(
        "ratios <= 4 within 0.15 of 0.5",
        format!(
            "max |phi - 0.5| = {worst:.3} over [{}]",
            low.iter()
                .map(|p| format!("{:.2}", p.mean))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        worst <= 0.15,
    );
    let high: Vec<(f64, f64)> = est
        .iter()
        .filter(|(r, _)| *r >= 8.0)
        .map(|(r, p)| (r.log2(), p.mean))
        .collect();
    let xs: Vec<f64> = high.iter().map(|h| h.0).collect();
    let ys: Vec<f64> = high.iter().map(|h| h.1).collect();
    let b = slope(&xs, &ys);
    let mean_low = low.iter().map(|p| p.mean).sum::<f64>() / low.len() as f64;
    let mean_high = ys.iter().sum::<f64>() / ys.len() as f64;
    rep.check(
        "ratios >= 8 degrade in trend",
        format!("slope in log2(ratio) {b:.3} < 0, mean {mean_high:.3} < {mean_low:.3}"),
        b < 0.0 && mean_high < mean_low,
    );
    let last = &est[est.len() - 1].1;
    rep.check(
        "ratio 32 interval covers 0",
        format!("({:.3}, {:.3})", last.lo, last.hi),
        last.lo <= 0.0 && last.hi >= 0.0,
    );
    Ok(rep)
}

/// Aligned forecast/truth vectors over every held-out tick.
pub struct ForecastScores {
    pub y: ScoreReport,
    pub lambda: ScoreReport,
    pub y_absolute: ScoreReport,
    pub population_mad: f64,
}

pub fn masked_forecast_scores(
    draws: &PosteriorDraws,
    cfg: &FitConfig,
    train: &[SubjectSeries],
    held: &[SubjectSeries],
    truth: &TruthRecord,
    seed: u64,
) -> Result<ForecastScores> {
    let mut requests = Vec::new();
    for h in held {
        let Some(t) = train.iter().find(|s| s.subject_id == h.subject_id) else {
            continue;
        };
        if draws.subject_index(&h.subject_id).is_none() {
            continue;
        }
        let mut ticks: Vec<i64> = h.obs_ticks.iter().chain(&h.event_ticks).copied().collect();
        ticks.sort_unstable();
        ticks.dedup();
        requests.push((t.clone(), ticks));
    }
    if requests.is_empty() {
        return Err(Error::Empty("no held-out subject was fitted".into()));
    }
    let results = forecast_all(draws, cfg, &requests, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let (mut py, mut sy, mut ty, mut pl, mut sl, mut tl, mut pop) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    for (f, (series, ticks)) in results.iter().zip(&requests) {
        let base = population_only_forecast(draws, cfg, series, ticks, &mut rng)?;
        for k in 0..f.len() {
            let row = truth.row(&f.subject_id, f.ticks[k]).ok_or_else(|| {
                Error::Data(format!("no truth for {} at {}", f.subject_id, f.ticks[k]))
            })?;
            py.push(f.y_mean[k]);
            sy.push(f.y_sd[k]);
            ty.push(row.y_true);
            pl.push(f.lambda_mean[k]);
            sl.push(f.lambda_sd[k]);
            tl.push(row.lambda);
            pop.push((base.y_mean[k] - row.y_true).abs());
        }
    }
    pop.sort_by(f64::total_cmp);
    let population_mad = crate::sampler::quantile_sorted(&pop, 0.5);
    Ok(ForecastScores {
        y: score(&py, &sy, &ty, ScoreMode::Relative)?,
        lambda: score(&pl, &sl, &tl, ScoreMode::Relative)?,
        y_absolute: score(&py, &sy, &ty, ScoreMode::Absolute)?,
        population_mad,
    })
}

/// Sim-1 with the later half of half the subjects held out.
pub fn table3(opts: &ReproOptions) -> Result<Report> {
    let mut rep = Report::new("table3");
    let mut sim = SimConfig::preset("sim1")?;
    sim.seed = opts.seed;
    let (data, truth) = stage("simulate", simulate(&sim))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(100));
    let (train, held) = stage("mask", mask_second_half(&data, 0.5, &mut rng))?;
    let cfg = opts.fit_config(Mode::Jhgp, opts.seed);
    let (_, draws) = stage("fit", fit(&train, &cfg))?;
    let s = stage(
        "forecast",
        masked_forecast_scores(&draws, &cfg, &train, &held, &truth, opts.seed),
    )?;
    let reference_y = [0.25, 0.64, 0.52, 0.86];
    let reference_l = [0.19, 0.30, 0.71, 0.73];
    let got_y = [s.y.mpsd, s.y.mad, s.y.rmse, s.y.cor];
    let got_l = [s.lambda.mpsd, s.lambda.mad, s.lambda.rmse, s.lambda.cor];
    for (k, name) in ["MPSD", "MAD", "RMSE", "Cor"].iter().enumerate() {
        rep.row(
            "Y",
            *name,
            format!("{:.2}", reference_y[k]),
            format!("{:.2}", got_y[k]),
        );
        rep.row(
            "lambda",
            *name,
            format!("{:.2}", reference_l[k]),
            format!("{:.2}", got_l[k]),
        );
    }
    rep.row(
        "Y",
        "absolute MAD, individual vs population-only",
        "-",
        format!("{:.3} vs {:.3}", s.y_absolute.mad, s.population_mad),
    );
    rep.check(
        "Y correlation >= 0.80",
        format!("{:.3}", s.y.cor),
        s.y.cor >= 0.80,
    );
    rep.check(
        "lambda correlation >= 0.65",
        format!("{:.3}", s.lambda.cor),
        s.lambda.cor >= 0.65,
    );
    rep.check(
        "Y relative MAD <= 0.75",
        format!("{:.3}", s.y.mad),
        s.y.mad <= 0.75,
    );
    Ok(rep)
}

/// Posterior-mean hazards and 0/1 labels of every event slot, in fit order.
pub fn hazard_scores(data: &FitData, draws: &PosteriorDraws) -> Result<(Vec<f64>, Vec<u8>)> {
    let fitted = fitted_hazards(data, draws)?;
    let mut s = Vec::new();
    let mut l = Vec::new();
    for (sub, f) in data.subjects.iter().zip(&fitted) {
        for (e, p) in sub.events.iter().zip(f) {
            s.push(*p);
            l.push(e.r);
        }
    }
    Ok((s, l))
}

/// JHGP versus the survival-only model versus logistic regression on `Y`, all
/// in-sample on one Sim-1 dataset.
pub fn figure4(opts: &ReproOptions) -> Result<Report> {
    let mut rep = Report::new("figure4");
    let mut sim = SimConfig::preset("sim1")?;
    sim.seed = opts.seed;
    let (data, _) = stage("simulate", simulate(&sim))?;

    let (jd, jdraws) = stage(
        "fit jhgp",
        fit(&data, &opts.fit_config(Mode::Jhgp, opts.seed)),
    )?;
    let (js, jl) = hazard_scores(&jd, &jdraws)?;
    let (hd, hdraws) = stage(
        "fit survival-only",
        fit(&data, &opts.fit_config(Mode::SurvivalOnly, opts.seed)),
    )?;
    let (hs, hl) = hazard_scores(&hd, &hdraws)?;

    let mut x = Vec::new();
    let mut r = Vec::new();
    for s in &data {
        for (&t, &rv) in s.event_ticks.iter().zip(&s.r) {
            if let Ok(k) = s.obs_ticks.binary_search(&t) {
                x.push(s.y[k]);
                r.push(rv);
            }
        }
    }
    let lfit = stage("logistic", logistic_baseline(&x, &r))?;

    let cj = roc(&js, &jl)?;
    let ch = roc(&hs, &hl)?;
    let cl = roc(&lfit.fitted, &r)?;
    rep.row("JHGP", "AUC", "0.828", format!("{:.3}", cj.auc));
    rep.row("extended HGP", "AUC", "0.782", format!("{:.3}", ch.auc));
    rep.row("logistic", "AUC", "0.626", format!("{:.3}", cl.auc));
    rep.series.push(("roc_jhgp.csv".into(), cj.csv()));
    rep.series.push(("roc_hgp.csv".into(), ch.csv()));
    rep.series.push(("roc_logistic.csv".into(), cl.csv()));
    rep.check(
        "AUC ordering JHGP > HGP > logistic",
        format!("{:.3} > {:.3} > {:.3}", cj.auc, ch.auc, cl.auc),
        cj.auc > ch.auc && ch.auc > cl.auc,
    );
    rep.check(
        "AUC(JHGP) >= 0.78",
        format!("{:.3}", cj.auc),
        cj.auc >= 0.78,
    );
    rep.check(
        "AUC(logistic) <= 0.70",
        format!("{:.3}", cl.auc),
        cl.auc <= 0.70,
    );
    Ok(rep)
}

pub fn run(which: &str, opts: &ReproOptions) -> Result<Report> {
    match which {
        "table1" => table1(opts),
        "table2" => table2(opts),
        "table3" => table3(opts),
        "figure4" => figure4(opts),
        other => Err(Error::Config(format!(
            "unknown experiment `{other}` (expected one of {})",
            EXPERIMENTS.join(", ")
        ))),
    }
}
