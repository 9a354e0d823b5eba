//! Forecast scores, ROC curves and the logistic-regression baseline.

use serde::{Deserialize, Serialize};

use crate::survival::logit_inv;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Absolute,
    /// MPSD over mean|pred|, MAD over median|truth|, RMSE over sd(truth).
    Relative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mpsd: f64,
    pub mad: f64,
    pub rmse: f64,
    pub cor: f64,
    pub mode: ScoreMode,
    pub n: usize,
}

impl ScoreReport {
    /// In relative mode MPSD is divided by mean |pred|, MAD by median |truth|
    /// and RMSE by sd(truth).
    pub const CSV_HEADER: &'static str = "mode,n,mpsd,mad,rmse,cor";

    pub fn csv_row(&self) -> String {
        let mode = match self.mode {
            ScoreMode::Absolute => "absolute",
            ScoreMode::Relative => "relative",
        };
        format!(
            "{mode},{},{},{},{},{}",
            self.n, self.mpsd, self.mad, self.rmse, self.cor
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

pub fn score(
    pred_mean: &[f64],
    pred_sd: &[f64],
    truth: &[f64],
    mode: ScoreMode,
) -> Result<ScoreReport> {
    let n = truth.len();
    if pred_mean.len() != n || pred_sd.len() != n {
        return Err(Error::Dimension(format!(
            "predictions {}, sds {}, truth {n}",
            pred_mean.len(),
            pred_sd.len()
        )));
    }
    if n < 2 {
        return Err(Error::Data(
            "scoring needs at least two aligned pairs".into(),
        ));
    }
    if pred_mean
        .iter()
        .chain(pred_sd)
        .chain(truth)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Data("non-finite value in scoring input".into()));
    }
    let err: Vec<f64> = pred_mean.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mut mpsd = mean(pred_sd);
    let mut mad = median(err.iter().map(|e| e.abs()).collect());
    let mut rmse = (err.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let cor = pearson(pred_mean, truth);
    if mode == ScoreMode::Relative {
        let s = sd(truth);
        if !(s > 0.0) {
            return Err(Error::Data(
                "truth has zero variance; relative scores undefined".into(),
            ));
        }
        let scale_pred = mean(&pred_mean.iter().map(|p| p.abs()).collect::<Vec<_>>());
        let scale_truth = median(truth.iter().map(|t| t.abs()).collect());
        mpsd /= scale_pred;
        mad /= scale_truth;
        rmse /= s;
    }
    Ok(ScoreReport {
        mpsd,
        mad,
        rmse,
        cor,
        mode,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for k in 0..self.fpr.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.thresholds[k], self.fpr[k], self.tpr[k]
            ));
        }
        out
    }
}

/// Threshold sweep over every distinct score (classify positive when
/// `score ≥ threshold`) plus `+∞`/`−∞`; ties move both rates at once, which
/// makes the trapezoid area equal to the Mann–Whitney statistic.
pub fn roc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
        thresholds.push(t);
    }
    fpr.push(1.0);
    tpr.push(1.0);
    thresholds.push(f64::NEG_INFINITY);
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * 0.5 * (t[0] + t[1]))
        .sum();
    Ok(RocCurve {
        fpr,
        tpr,
        thresholds,
        auc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slope: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The slope diverged and was capped at ±[`SLOPE_CAP`].
    pub separated: bool,
    pub fitted: Vec<f64>,
}

pub const SLOPE_CAP: f64 = 30.0;

pub fn logistic_loglik(x: &[f64], r: &[u8], intercept: f64, slope: f64) -> f64 {
    x.iter()
        .zip(r)
        .map(|(&xi, &ri)| {
            let h = intercept + slope * xi;
            f64::from(ri) * h - crate::survival::log1p_exp(h)
        })
        .sum()
}

/// Maximum-likelihood logistic regression of `r` on `x` by iteratively
/// reweighted least squares.
pub fn logistic_baseline(x: &[f64], r: &[u8]) -> Result<LogisticFit> {
    const TOL: f64 = 1e-8;
    const MAX_IT: usize = 100;
    if x.len() != r.len() {
        return Err(Error::Dimension(format!(
            "{} covariates vs {} labels",
            x.len(),
            r.len()
        )));
    }
    if x.len() < 10 {
        return Err(Error::Data(
            "logistic baseline needs at least 10 points".into(),
        ));
    }
    let pos = r.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == r.len() {
        return Err(Error::Data("logistic baseline needs both classes".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite covariate".into()));
    }
    let base = pos as f64 / r.len() as f64;
    let mut b0 = (base / (1.0 - base)).ln();
    let mut b1 = 0.0;
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    for it in 1..=MAX_IT {
        iterations = it;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &ri) in x.iter().zip(r) {
            let p = logit_inv(b0 + b1 * xi);
            let w = p * (1.0 - p);
            let e = f64::from(ri) - p;
            g0 += e;
            g1 += e * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det.abs() > 1e-300) {
            separated = true;
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        b0 += d0;
        b1 += d1;
        if b1.abs() > SLOPE_CAP {
            separated = true;
            break;
        }
        if d0.abs().max(d1.abs()) < TOL {
            converged = true;
            break;
        }
    }
    if separated {
        b1 = b1.clamp(-SLOPE_CAP, SLOPE_CAP);
        // best intercept for the capped slope
        for _ in 0..MAX_IT {
            let (mut g, mut h) = (0.0, 0.0);
            for (&xi, &ri) in x.iter().zip(r) {
                let p = logit_inv(b0 + b1 * xi);
                g += f64::from(ri) - p;
                h += p * (1.0 - p);
            }
            if !(h > 1e-300) {
                break;
            }
            let d = g / h;
            b0 += d;
            if d.abs() < TOL {
                break;
            }
        }
    }
    let fitted = x.iter().map(|&xi| logit_inv(b0 + b1 * xi)).collect();
    Ok(LogisticFit {
        intercept: b0,
        slope: b1,
        iterations,
        converged,
        separated,
        fitted,
    })
}
