use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jhgp::config::RunConfig;
use jhgp::data_model::{ingest_csv, write_events_csv, write_longitudinal_csv, SubjectSeries};
use jhgp::forecast::{forecast_all, forecast_csv};
use jhgp::metrics::{roc, score, ScoreReport};
use jhgp::persistence::{read_draws, read_manifest, register_file, write_manifest, write_text};
use jhgp::reproduce::{hazard_scores, run, ReproOptions};
use jhgp::sampler::{fit as fit_model, summarize, summary_csv, FitConfig, FitData};
use jhgp::simulate::{
    mask_second_half, read_truth_rows, simulate_dataset, write_truth_csv, write_truth_subjects_csv,
};
use jhgp::{Error, Result};

pub const RESOLVED: &str = "resolved.toml";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory; pass --out DIR or set `out`".into()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join(RESOLVED), &cfg.to_toml()?)
}

fn load_series(cfg: &RunConfig) -> Result<Vec<SubjectSeries>> {
    let y = required(&cfg.data.longitudinal, "data.longitudinal")?;
    ingest_csv(y, cfg.data.events.as_deref())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (data, truth) = simulate_dataset(&cfg.simulate, &mut rng)?;
    let (train, held) = mask_second_half(&data, cfg.forecast.mask_fraction, &mut rng)?;
    write_longitudinal_csv(&dir.join("longitudinal.csv"), &data)?;
    write_events_csv(&dir.join("events.csv"), &data)?;
    write_longitudinal_csv(&dir.join("train_longitudinal.csv"), &train)?;
    write_events_csv(&dir.join("train_events.csv"), &train)?;
    write_longitudinal_csv(&dir.join("heldout_longitudinal.csv"), &held)?;
    write_events_csv(&dir.join("heldout_events.csv"), &held)?;
    write_truth_csv(&dir.join("truth.csv"), &truth)?;
    write_truth_subjects_csv(&dir.join("truth_subjects.csv"), &truth)?;
    echo_config(cfg, &dir)?;
    println!("simulated {} subjects into {}", data.len(), dir.display());
    Ok(())
}

pub fn fit(cfg: &RunConfig, simulate_if_missing: bool) -> Result<()> {
    let series = if cfg.data.longitudinal.is_none() && simulate_if_missing {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        simulate_dataset(&cfg.simulate, &mut rng)?.0
    } else {
        load_series(cfg)?
    };
    let dir = out_dir(cfg)?;
    let (_, draws) = fit_model(&series, &cfg.fit)?;
    let mut manifest = jhgp::persistence::write_draws(&draws, &dir, cfg.seed, cfg.to_json())?;
    let summary = summary_csv(&summarize(&draws)?);
    write_text(&dir.join("summary.csv"), &summary)?;
    echo_config(cfg, &dir)?;
    register_file(&dir, &mut manifest, "summary.csv")?;
    register_file(&dir, &mut manifest, RESOLVED)?;
    write_manifest(&dir, &manifest)?;
    print!("{summary}");
    Ok(())
}

/// Fit configuration recorded by the `fit` that produced `dir`.
fn fitted_config(dir: &Path) -> Result<FitConfig> {
    let manifest = read_manifest(dir)?;
    let fit = manifest
        .config
        .get("fit")
        .cloned()
        .unwrap_or(serde_json::Value::Null);
    serde_json::from_value(fit).map_err(|e| Error::Format {
        path: dir.join(jhgp::persistence::MANIFEST),
        message: format!("fit configuration: {e}"),
    })
}

pub fn forecast(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let fit_dir = required(&cfg.data.fit_dir, "data.fit_dir")?;
    let fit_cfg = fitted_config(fit_dir)?;
    let draws = read_draws(fit_dir)?;
    let train = load_series(cfg)?;
    let known = |s: &&SubjectSeries| {
        let ok = draws.subject_index(&s.subject_id).is_some();
        if !ok {
            eprintln!("warning: subject {} was not fitted, skipped", s.subject_id);
        }
        ok
    };
    let requests: Vec<(SubjectSeries, Vec<i64>)> = match &cfg.data.heldout {
        Some(h) => {
            let held = ingest_csv(h, cfg.data.heldout_events.as_deref())?;
            let by_id: HashMap<&str, &SubjectSeries> =
                train.iter().map(|s| (s.subject_id.as_str(), s)).collect();
            let mut out = Vec::new();
            for h in &held {
                let Some(t) = by_id.get(h.subject_id.as_str()) else {
                    return Err(Error::Data(format!(
                        "held-out subject {} has no training records",
                        h.subject_id
                    )));
                };
                if !known(t) {
                    continue;
                }
                let mut ticks: Vec<i64> =
                    h.obs_ticks.iter().chain(&h.event_ticks).copied().collect();
                ticks.sort_unstable();
                ticks.dedup();
                out.push(((*t).clone(), ticks));
            }
            out
        }
        None => train
            .iter()
            .filter(known)
            .filter_map(|s| {
                let last = s.last_tick()?;
                Some((
                    s.clone(),
                    (1..=cfg.forecast.horizon as i64)
                        .map(|k| last + k)
                        .collect(),
                ))
            })
            .collect(),
    };
    let results = forecast_all(&draws, &fit_cfg, &requests, cfg.seed)?;
    write_text(&dir.join("forecast.csv"), &forecast_csv(&results))?;
    echo_config(cfg, &dir)?;
    println!(
        "forecast {} subjects into {}",
        results.len(),
        dir.join("forecast.csv").display()
    );
    Ok(())
}

/// Half-width of a central 95% normal interval, in standard deviations.
const Z975: f64 = 1.959_963_984_540_054;

fn parse_cell(path: &Path, raw: &str) -> Result<f64> {
    if raw == "NA" {
        return Ok(f64::NAN);
    }
    raw.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: format!("bad number `{raw}`"),
    })
}

struct Scored {
    pred: Vec<f64>,
    sd: Vec<f64>,
    truth: Vec<f64>,
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let fpath = required(&cfg.data.forecast, "data.forecast")?;
    let tpath = required(&cfg.data.truth, "data.truth")?;
    let truth: HashMap<(String, i64), (f64, f64)> = read_truth_rows(tpath)?
        .into_iter()
        .map(|r| ((r.subject_id, r.tick), (r.y_true, r.lambda)))
        .collect();
    let fmt_err = |m: String| Error::Format {
        path: fpath.to_path_buf(),
        message: m,
    };
    let mut rdr = csv::Reader::from_path(fpath).map_err(|e| fmt_err(e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| fmt_err(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != jhgp::forecast::FORECAST_HEADER {
        return Err(fmt_err(format!("unexpected header `{header}`")));
    }
    let mut y = Scored {
        pred: vec![],
        sd: vec![],
        truth: vec![],
    };
    let mut lambda = Scored {
        pred: vec![],
        sd: vec![],
        truth: vec![],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        let id = rec[0].to_string();
        let tick: i64 = rec[1]
            .parse()
            .map_err(|_| fmt_err(format!("bad tick `{}`", &rec[1])))?;
        let v: Vec<f64> = (2..8)
            .map(|k| parse_cell(fpath, &rec[k]))
            .collect::<Result<_>>()?;
        let &(y_true, lambda_true) = truth
            .get(&(id.clone(), tick))
            .ok_or_else(|| Error::Data(format!("no truth for subject {id} at tick {tick}")))?;
        for (target, mean, lo, hi, t) in [
            (&mut y, v[0], v[1], v[2], y_true),
            (&mut lambda, v[3], v[4], v[5], lambda_true),
        ] {
            if mean.is_finite() {
                target.pred.push(mean);
                target.sd.push((hi - lo) / (2.0 * Z975));
                target.truth.push(t);
            }
        }
    }
    let mode = cfg.evaluate.score_mode;
    let mut out = format!("channel,{}\n", ScoreReport::CSV_HEADER);
    for (name, s) in [("y", &y), ("lambda", &lambda)] {
        if s.pred.is_empty() {
            continue;
        }
        let r = score(&s.pred, &s.sd, &s.truth, mode)?;
        out.push_str(&format!("{name},{}\n", r.csv_row()));
    }
    write_text(&dir.join("scores.csv"), &out)?;
    print!("{out}");

    if let Some(fit_dir) = &cfg.data.fit_dir {
        let fit_cfg = fitted_config(fit_dir)?;
        let draws = read_draws(fit_dir)?;
        let data = FitData::new(&load_series(cfg)?, fit_cfg.mode)?;
        let (s, l) = hazard_scores(&data, &draws)?;
        let curve = roc(&s, &l)?;
        write_text(&dir.join("roc.csv"), &curve.csv())?;
        println!("in-sample AUC {}", curve.auc);
    }
    echo_config(cfg, &dir)?;
    Ok(())
}

pub fn reproduce(cfg: &RunConfig, which: &[&str]) -> Result<()> {
    let dir = out_dir(cfg)?;
    let m = &cfg.fit.mcmc;
    let opts = ReproOptions {
        seed: cfg.seed,
        iterations: m.iterations,
        burn_in: m.burn_in,
        thin: m.thin,
    };
    let mut text = String::new();
    for name in which {
        let rep = run(name, &opts)?;
        write_text(&dir.join(format!("{name}_comparison.csv")), &rep.rows_csv())?;
        write_text(&dir.join(format!("{name}_checks.csv")), &rep.checks_csv())?;
        for (file, body) in &rep.series {
            write_text(&dir.join(file), body)?;
        }
        let r = rep.render();
        print!("{r}");
        text.push_str(&r);
    }
    write_text(&dir.join("report.txt"), &text)?;
    echo_config(cfg, &dir)
}
