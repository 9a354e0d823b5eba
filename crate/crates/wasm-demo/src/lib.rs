//! Browser bindings: simulate a preset, fit and forecast the masked half, and
//! compare in-sample hazard ROC curves. Every call returns a JSON string.

use jhgp::data_model::SubjectSeries;
use jhgp::forecast::forecast_all;
use jhgp::metrics::{logistic_baseline, roc, RocCurve};
use jhgp::reproduce::hazard_scores;
use jhgp::sampler::{fit, summarize, FitConfig, FitData, Mode, PosteriorDraws, SummaryRow};
use jhgp::simulate::{mask_second_half, simulate_dataset, SimConfig, TruthRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct SubjectView<'a> {
    id: &'a str,
    obs_ticks: &'a [i64],
    y: &'a [f64],
    event_ticks: &'a [i64],
    r: &'a [u8],
    truth_ticks: Vec<i64>,
    y_true: Vec<f64>,
    lambda_true: Vec<f64>,
}

#[derive(Serialize)]
struct ForecastView {
    id: String,
    ticks: Vec<i64>,
    y_mean: Vec<f64>,
    y_lo: Vec<f64>,
    y_hi: Vec<f64>,
    lambda_mean: Vec<f64>,
    lambda_lo: Vec<f64>,
    lambda_hi: Vec<f64>,
    held_y: Vec<f64>,
}

#[derive(Serialize)]
struct FitView<'a> {
    summary: &'a [SummaryRow],
    forecasts: Vec<ForecastView>,
}

#[derive(Serialize)]
struct CurveView {
    label: &'static str,
    auc: f64,
    fpr: Vec<f64>,
    tpr: Vec<f64>,
}

/// Simulated dataset plus the fit state the browser page works on.
pub struct Demo {
    truth: TruthRecord,
    full: Vec<SubjectSeries>,
    train: Vec<SubjectSeries>,
    held: Vec<SubjectSeries>,
    seed: u64,
    fitted: Option<(FitConfig, FitData, PosteriorDraws, Vec<SummaryRow>)>,
}

impl Demo {
    pub fn new(preset: &str, n_subjects: usize, seed: u64) -> jhgp::Result<Self> {
        let mut sim = SimConfig::preset(preset)?;
        sim.n_subjects = n_subjects;
        sim.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (full, truth) = simulate_dataset(&sim, &mut rng)?;
        let (train, held) = mask_second_half(&full, 0.5, &mut rng)?;
        Ok(Demo {
            truth,
            full,
            train,
            held,
            seed,
            fitted: None,
        })
    }

    pub fn subjects_json(&self) -> String {
        let views: Vec<SubjectView> = self
            .full
            .iter()
            .map(|s| {
                let rows: Vec<_> = self.truth.rows_for(&s.subject_id).collect();
                SubjectView {
                    id: &s.subject_id,
                    obs_ticks: &s.obs_ticks,
                    y: &s.y,
                    event_ticks: &s.event_ticks,
                    r: &s.r,
                    truth_ticks: rows.iter().map(|r| r.tick).collect(),
                    y_true: rows.iter().map(|r| r.y_true).collect(),
                    lambda_true: rows.iter().map(|r| r.lambda).collect(),
                }
            })
            .collect();
        serde_json::to_string(&views).expect("serializable")
    }

    /// Fits the training half and forecasts every masked subject.
    pub fn fit_json(&mut self, iterations: usize) -> jhgp::Result<String> {
        let mut cfg = FitConfig::default();
        cfg.mode = Mode::Jhgp;
        cfg.mcmc.iterations = iterations;
        cfg.mcmc.burn_in = iterations / 2;
        cfg.mcmc.thin = (iterations / 400).max(1);
        cfg.mcmc.chains = 1;
        cfg.mcmc.seed = self.seed;
        let (data, draws) = fit(&self.train, &cfg)?;
        let summary = summarize(&draws)?;
        let requests: Vec<(SubjectSeries, Vec<i64>)> = self
            .held
            .iter()
            .filter_map(|h| {
                let t = self.train.iter().find(|s| s.subject_id == h.subject_id)?;
                Some((t.clone(), h.obs_ticks.clone()))
            })
            .collect();
        let results = forecast_all(&draws, &cfg, &requests, self.seed)?;
        let forecasts = results
            .into_iter()
            .zip(&self.held)
            .map(|(f, h)| ForecastView {
                id: f.subject_id,
                ticks: f.ticks,
                y_mean: f.y_mean,
                y_lo: f.y_lo,
                y_hi: f.y_hi,
                lambda_mean: f.lambda_mean,
                lambda_lo: f.lambda_lo,
                lambda_hi: f.lambda_hi,
                held_y: h.y.clone(),
            })
            .collect();
        let out = serde_json::to_string(&FitView {
            summary: &summary,
            forecasts,
        })
        .expect("serializable");
        self.fitted = Some((cfg, data, draws, summary));
        Ok(out)
    }

    /// In-sample ROC of the fitted hazards against logistic regression on `Y`.
    pub fn roc_json(&self) -> jhgp::Result<String> {
        let (_, data, draws, _) = self
            .fitted
            .as_ref()
            .ok_or_else(|| jhgp::Error::Config("fit the model first".into()))?;
        let (scores, labels) = hazard_scores(data, draws)?;
        let model = roc(&scores, &labels)?;
        let mut x = Vec::new();
        let mut r = Vec::new();
        for s in &self.train {
            for (&t, &rv) in s.event_ticks.iter().zip(&s.r) {
                if let Ok(k) = s.obs_ticks.binary_search(&t) {
                    x.push(s.y[k]);
                    r.push(rv);
                }
            }
        }
        let baseline = roc(&logistic_baseline(&x, &r)?.fitted, &r)?;
        let view = |label, c: RocCurve| CurveView {
            label,
            auc: c.auc,
            fpr: c.fpr,
            tpr: c.tpr,
        };
        Ok(
            serde_json::to_string(&[view("joint model", model), view("logistic on Y", baseline)])
                .expect("serializable"),
        )
    }
}

fn js(e: jhgp::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Session(Demo);

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, n_subjects: usize, seed: u32) -> Result<Session, JsError> {
        Demo::new(preset, n_subjects, seed as u64)
            .map(Session)
            .map_err(js)
    }

    pub fn subjects(&self) -> String {
        self.0.subjects_json()
    }

    pub fn fit(&mut self, iterations: usize) -> Result<String, JsError> {
        self.0.fit_json(iterations).map_err(js)
    }

    pub fn roc(&self) -> Result<String, JsError> {
        self.0.roc_json().map_err(js)
    }
}
