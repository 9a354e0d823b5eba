//! Extrapolation of the longitudinal outcome and the hazard past a subject's
//! observed window, averaged over posterior draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_model::SubjectSeries;
use crate::gp_core::{krige, mvn_sample, GaussianDist};
use crate::kernels::{cov_matrix, realize, ticks_f64, CovMatrix, KernelSpec};
use crate::sampler::{quantile_sorted, Draw, FitConfig, PosteriorDraws};
use crate::survival::logit_inv;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub subject_id: String,
    pub ticks: Vec<i64>,
    pub y_mean: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    /// Predictive standard deviation across paths.
    pub y_sd: Vec<f64>,
    pub lambda_mean: Vec<f64>,
    pub lambda_lo: Vec<f64>,
    pub lambda_hi: Vec<f64>,
    pub lambda_sd: Vec<f64>,
    /// Population-only prediction `μ_y(s) + γ_i`.
    pub pop_mean: Vec<f64>,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }
}

fn resolved(base: &KernelSpec, theta: f64) -> KernelSpec {
    if base.hyper().is_some() {
        base.with_hyper(theta)
    } else {
        base.clone()
    }
}

/// Individual kernel for one draw; kernels without a hyperparameter are
/// anchored at the start of the subject's grid, as in the sampler.
pub fn psi_kernel(cfg: &FitConfig, draw: &Draw) -> KernelSpec {
    if cfg.kernel_psi.hyper().is_some() {
        cfg.kernel_psi.with_hyper(draw.theta_psi)
    } else {
        cfg.kernel_psi.anchored(0.0)
    }
}

/// Values of a mean process at `s`: looked up where `s` is on the global grid,
/// otherwise sampled from its Kriging conditional given the whole grid.
pub fn extend_mean<R: Rng + ?Sized>(
    values: &[f64],
    global: &[i64],
    kernel: &KernelSpec,
    sigma2: f64,
    s: &[i64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; s.len()];
    let mut outside = Vec::new();
    for (k, &t) in s.iter().enumerate() {
        match global.binary_search(&t) {
            Ok(j) => out[k] = values[j],
            Err(_) => outside.push(k),
        }
    }
    if outside.is_empty() {
        return Ok(out);
    }
    let gt = ticks_f64(global);
    let st: Vec<f64> = outside.iter().map(|&k| s[k] as f64).collect();
    let cov_tt = cov_matrix(kernel, &gt, sigma2)?;
    let cov_ss = cov_matrix(kernel, &st, sigma2)?;
    let cov_st = realize(kernel, &st, &gt)? * sigma2;
    let dist = krige(
        &DVector::zeros(gt.len()),
        &DVector::zeros(st.len()),
        &cov_tt,
        &cov_ss,
        &cov_st,
        &DVector::from_column_slice(values),
        0.0,
    )?;
    let path = mvn_sample(&dist, rng)?;
    for (j, &k) in outside.iter().enumerate() {
        out[k] = path[j];
    }
    Ok(out)
}

/// Conditional law of `ψ_i(s)` under one draw. With longitudinal data it is
/// `K(s,t)(V_ψσ²_ψi + σ_y²I)⁻¹(Y(t) − μ_y(t) − γ_i)`; without, the draw's
/// own `ψ_i` on the subject grid is the conditioning set.
pub fn psi_predictive(
    cfg: &FitConfig,
    draws: &PosteriorDraws,
    draw: &Draw,
    idx: usize,
    series: &SubjectSeries,
    s: &[i64],
) -> Result<GaussianDist> {
    let layout = &draws.subjects[idx];
    let origin = layout.ticks[0];
    let kernel = psi_kernel(cfg, draw);
    let s2 = draw.sigma2_psi[idx];
    let local = |t: i64| (t - origin) as f64;
    let (t, resid, noise) = if draws.mode.has_longitudinal() {
        let mut t = Vec::with_capacity(series.obs_ticks.len());
        let mut r = Vec::with_capacity(series.obs_ticks.len());
        for (&tick, &y) in series.obs_ticks.iter().zip(&series.y) {
            let g = draws.global_ticks.binary_search(&tick).map_err(|_| {
                Error::Data(format!(
                    "{}: observation tick {tick} is outside the fitted grid",
                    series.subject_id
                ))
            })?;
            t.push(local(tick));
            r.push(y - draw.mu_y[g] - draw.gamma[idx]);
        }
        (t, r, draw.sigma2_y)
    } else {
        let t: Vec<f64> = layout.ticks.iter().map(|&x| local(x)).collect();
        (t, draw.psi[idx].clone(), 0.0)
    };
    let sl: Vec<f64> = s.iter().map(|&x| local(x)).collect();
    let cov_tt = cov_matrix(&kernel, &t, s2)?;
    let cov_ss = cov_matrix(&kernel, &sl, s2)?;
    let cov_st: DMatrix<f64> = realize(&kernel, &sl, &t)? * s2;
    krige(
        &DVector::zeros(t.len()),
        &DVector::zeros(sl.len()),
        &cov_tt,
        &cov_ss,
        &cov_st,
        &DVector::from_vec(resid),
        noise,
    )
}

struct Paths {
    y: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    pop: Vec<Vec<f64>>,
}

fn collect_paths<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    cfg: &FitConfig,
    series: &SubjectSeries,
    s: &[i64],
    individual: bool,
    rng: &mut R,
) -> Result<Paths> {
    if draws.is_empty() {
        return Err(Error::Empty("no retained draws".into()));
    }
    if s.is_empty() {
        return Err(Error::Empty("no forecast ticks".into()));
    }
    let idx = draws.subject_index(&series.subject_id).ok_or_else(|| {
        Error::Data(format!(
            "subject {} was not part of the fit",
            series.subject_id
        ))
    })?;
    let mode = draws.mode;
    let mut paths = Paths {
        y: Vec::with_capacity(draws.len()),
        lambda: Vec::with_capacity(draws.len()),
        pop: Vec::with_capacity(draws.len()),
    };
    for d in draws.iter() {
        let psi = if individual {
            let dist = psi_predictive(cfg, draws, d, idx, series, s)?;
            mvn_sample(&dist, rng)?.iter().copied().collect()
        } else {
            vec![0.0; s.len()]
        };
        if mode.has_longitudinal() {
            let k = resolved(&cfg.kernel_mu_y, d.theta_mu_y);
            let mu = extend_mean(&d.mu_y, &draws.global_ticks, &k, d.sigma2_mu_y, s, rng)?;
            paths
                .pop
                .push(mu.iter().map(|m| m + d.gamma[idx]).collect());
            paths.y.push(
                mu.iter()
                    .zip(&psi)
                    .map(|(m, p)| m + d.gamma[idx] + p)
                    .collect(),
            );
        }
        if mode.has_survival() {
            let k = resolved(&cfg.kernel_mu_h, d.theta_mu_h);
            let mu = extend_mean(&d.mu_h, &draws.global_ticks, &k, d.sigma2_mu_h, s, rng)?;
            paths.lambda.push(
                mu.iter()
                    .zip(&psi)
                    .map(|(m, p)| logit_inv(d.eta[idx] + m + d.phi * p))
                    .collect(),
            );
        }
    }
    Ok(paths)
}

struct Band {
    mean: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    sd: Vec<f64>,
}

/// Pointwise mean, sd and 2.5%/97.5% quantiles across paths; NaN when absent.
fn bands(paths: &[Vec<f64>], n: usize) -> Band {
    if paths.is_empty() {
        let nan = vec![f64::NAN; n];
        return Band {
            mean: nan.clone(),
            lo: nan.clone(),
            hi: nan.clone(),
            sd: nan,
        };
    }
    let mut b = Band {
        mean: Vec::with_capacity(n),
        lo: Vec::with_capacity(n),
        hi: Vec::with_capacity(n),
        sd: Vec::with_capacity(n),
    };
    let mut col = Vec::with_capacity(paths.len());
    for k in 0..n {
        col.clear();
        col.extend(paths.iter().map(|p| p[k]));
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let var = if col.len() > 1 {
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (col.len() - 1) as f64
        } else {
            0.0
        };
        b.mean.push(m);
        b.sd.push(var.sqrt());
        col.sort_by(f64::total_cmp);
        b.lo.push(quantile_sorted(&col, 0.025));
        b.hi.push(quantile_sorted(&col, 0.975));
    }
    b
}

fn assemble(series: &SubjectSeries, s: &[i64], paths: Paths) -> ForecastResult {
    let n = s.len();
    let y = bands(&paths.y, n);
    let lambda = bands(&paths.lambda, n);
    let pop = bands(&paths.pop, n);
    ForecastResult {
        subject_id: series.subject_id.clone(),
        ticks: s.to_vec(),
        y_mean: y.mean,
        y_lo: y.lo,
        y_hi: y.hi,
        y_sd: y.sd,
        lambda_mean: lambda.mean,
        lambda_lo: lambda.lo,
        lambda_hi: lambda.hi,
        lambda_sd: lambda.sd,
        pop_mean: pop.mean,
    }
}

/// Posterior predictive of the subject's latent trajectory `f_i(s)` and hazard
/// `λ_i(s)`, one sampled path per retained draw. `series` is the data the
/// subject was fitted on.
pub fn forecast_subject<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    cfg: &FitConfig,
    series: &SubjectSeries,
    s: &[i64],
    rng: &mut R,
) -> Result<ForecastResult> {
    let paths = collect_paths(draws, cfg, series, s, true, rng)?;
    Ok(assemble(series, s, paths))
}

/// Forecast without the individual correction: `μ_y(s) + γ_i` and
/// `logit⁻¹(η_i + μ_h(s))`.
pub fn population_only_forecast<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    cfg: &FitConfig,
    series: &SubjectSeries,
    s: &[i64],
    rng: &mut R,
) -> Result<ForecastResult> {
    let paths = collect_paths(draws, cfg, series, s, false, rng)?;
    let mut out = assemble(series, s, paths);
    out.pop_mean = out.y_mean.clone();
    Ok(out)
}

/// Forecasts every `(series, ticks)` pair; subject `k` uses the stream
/// seeded with `seed + k` so results do not depend on scheduling.
pub fn forecast_all(
    draws: &PosteriorDraws,
    cfg: &FitConfig,
    requests: &[(SubjectSeries, Vec<i64>)],
    seed: u64,
) -> Result<Vec<ForecastResult>> {
    let run = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let (series, s) = &requests[k];
        forecast_subject(draws, cfg, series, s, &mut rng)
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(requests.len().max(1));
    if workers <= 1 {
        return (0..requests.len()).map(run).collect();
    }
    let mut slots: Vec<Option<Result<ForecastResult>>> =
        (0..requests.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run = &run;
                scope.spawn(move || {
                    (w..requests.len())
                        .step_by(workers)
                        .map(|k| (k, run(k)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("forecast worker panicked") {
                slots[k] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every request visited"))
        .collect()
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        v.to_string()
    }
}

pub const FORECAST_HEADER: &str =
    "subject_id,tick,y_mean,y_lo,y_hi,lambda_mean,lambda_lo,lambda_hi,pop_mean";

pub fn forecast_csv(results: &[ForecastResult]) -> String {
    let mut out = String::from(FORECAST_HEADER);
    out.push('\n');
    for r in results {
        for k in 0..r.len() {
            let row = [
                r.y_mean[k],
                r.y_lo[k],
                r.y_hi[k],
                r.lambda_mean[k],
                r.lambda_lo[k],
                r.lambda_hi[k],
                r.pop_mean[k],
            ];
            out.push_str(&r.subject_id);
            out.push(',');
            out.push_str(&r.ticks[k].to_string());
            for v in row {
                out.push(',');
                out.push_str(&cell(v));
            }
            out.push('\n');
        }
    }
    out
}

/// Kriging mean of a zero-mean stationary AR(1) series observed without noise
/// at ticks `0..n`, projected `steps` ticks ahead, next to the recursion
/// `x̂_{n-1+k} = ρ·x̂_{n-2+k}`.
pub fn ar_equivalence_check(
    rho: f64,
    series: &[f64],
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(rho.abs() < 1.0) {
        return Err(Error::ParameterDomain(format!(
            "|rho| must be < 1, got {rho}"
        )));
    }
    if series.len() < 2 {
        return Err(Error::Data("series needs at least two values".into()));
    }
    if steps == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let n = series.len();
    let corr = |a: usize, b: usize| rho.powi(a.abs_diff(b) as i32);
    let v = DMatrix::from_fn(n, n, |a, b| corr(a, b));
    let k = DMatrix::from_fn(steps, n, |j, b| corr(n + j, b));
    let chol = CovMatrix::new(v);
    let w = chol.factor()?.solve(&DVector::from_column_slice(series));
    let krige_path: Vec<f64> = (&k * w).iter().copied().collect();
    let mut last = series[n - 1];
    let recursion = (0..steps)
        .map(|_| {
            last *= rho;
            last
        })
        .collect();
    Ok((krige_path, recursion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ChainDraws, ChainMeta, Mode, SubjectLayout};
    use std::collections::BTreeMap;

    fn one_subject_draws(
        mode: Mode,
        sigma2_y: f64,
        sigma2_psi: f64,
        rho: f64,
    ) -> (PosteriorDraws, SubjectSeries) {
        let global: Vec<i64> = (1..=6).collect();
        let series = SubjectSeries::new(
            "a",
            vec![1, 2, 3, 4],
            vec![0.5, -0.3, 0.4, -0.1],
            vec![1, 2, 3, 4],
            vec![0, 1, 0, 0],
        )
        .unwrap();
        let draw = Draw {
            iteration: 0,
            mu_y: vec![1.0; 6],
            mu_h: vec![-1.0; 6],
            psi: vec![vec![0.4, -0.3, 0.3, -0.2]],
            gamma: vec![0.2],
            eta: vec![0.1],
            phi: 0.5,
            theta_psi: rho,
            theta_mu_y: 3.0,
            theta_mu_h: 3.0,
            sigma2_y,
            sigma2_psi: vec![sigma2_psi],
            sigma2_mu_y: 1.0,
            sigma2_mu_h: 1.0,
            tau2: 1.0,
            g_gamma: 1.0,
            g_eta: 1.0,
            g_phi: 1.0,
            mu_phi: 0.0,
        };
        let draws = PosteriorDraws {
            mode,
            global_ticks: global,
            subjects: vec![SubjectLayout {
                id: "a".into(),
                ticks: vec![1, 2, 3, 4],
            }],
            chains: vec![ChainDraws {
                meta: ChainMeta {
                    chain: 0,
                    seed: 0,
                    iterations: 1,
                    burn_in: 0,
                    thin: 1,
                    acceptance: BTreeMap::new(),
                },
                draws: vec![draw; 200],
            }],
        };
        (draws, series)
    }

    #[test]
    fn ar_single_step() {
        let (k, r) = ar_equivalence_check(-0.8, &[1.0, -0.8, 0.64], 1).unwrap();
        assert!((k[0] + 0.512).abs() < 1e-12);
        assert!((r[0] + 0.512).abs() < 1e-15);
    }

    #[test]
    fn ar_zero_steps_is_empty() {
        let (k, r) = ar_equivalence_check(-0.3, &[1.0, 2.0], 0).unwrap();
        assert!(k.is_empty() && r.is_empty());
    }

    #[test]
    fn ar_rejects_short_series() {
        assert!(ar_equivalence_check(-0.3, &[1.0], 3).is_err());
        assert!(ar_equivalence_check(1.0, &[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn interpolates_observed_tick_with_tiny_noise() {
        let (draws, series) = one_subject_draws(Mode::HgpOnly, 1e-8, 1.0, -0.5);
        let cfg = FitConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = forecast_subject(&draws, &cfg, &series, &[2], &mut rng).unwrap();
        assert!((f.y_mean[0] - (-0.3)).abs() < 1e-3);
        assert!(f.lambda_mean[0].is_nan());
    }

    #[test]
    fn far_horizon_decays_to_population() {
        let (draws, series) = one_subject_draws(Mode::HgpOnly, 0.01, 1.0, -0.5);
        let cfg = FitConfig::default();
        let d = draws.chains[0].draws[0].clone();
        let dist = psi_predictive(&cfg, &draws, &d, 0, &series, &[40]).unwrap();
        assert!(dist.mean[0].abs() < 1e-10);
        assert!((dist.cov.matrix()[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn predictive_variance_grows_with_horizon() {
        let (draws, series) = one_subject_draws(Mode::Jhgp, 0.05, 0.7, -0.6);
        let cfg = FitConfig::default();
        let d = draws.chains[0].draws[0].clone();
        let s: Vec<i64> = (5..=12).collect();
        let dist = psi_predictive(&cfg, &draws, &d, 0, &series, &s).unwrap();
        let m = dist.cov.matrix();
        for k in 1..s.len() {
            assert!(m[(k, k)] >= m[(k - 1, k - 1)] - 1e-12);
        }
    }

    #[test]
    fn population_only_without_individual_signal_matches_full() {
        let (draws, series) = one_subject_draws(Mode::Jhgp, 0.1, 1e-12, -0.5);
        let cfg = FitConfig::default();
        let s = [5, 6];
        let a =
            forecast_subject(&draws, &cfg, &series, &s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b =
            population_only_forecast(&draws, &cfg, &series, &s, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap();
        for k in 0..2 {
            assert!((a.y_mean[k] - b.y_mean[k]).abs() < 1e-5);
            assert!((b.y_mean[k] - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn brownian_offset_is_constant() {
        let (draws, series) = one_subject_draws(Mode::HgpOnly, 0.05, 0.8, f64::NAN);
        let mut cfg = FitConfig::default();
        cfg.kernel_psi = KernelSpec::brownian(0.0);
        let d = draws.chains[0].draws[0].clone();
        let s: Vec<i64> = (5..=15).collect();
        let dist = psi_predictive(&cfg, &draws, &d, 0, &series, &s).unwrap();
        for k in 1..s.len() {
            assert!((dist.mean[k] - dist.mean[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn lambda_bounds_and_order() {
        let (draws, series) = one_subject_draws(Mode::Jhgp, 0.05, 0.8, -0.5);
        let cfg = FitConfig::default();
        let s: Vec<i64> = (3..=9).collect();
        let f =
            forecast_subject(&draws, &cfg, &series, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 0..s.len() {
            assert!(f.y_lo[k] <= f.y_mean[k] && f.y_mean[k] <= f.y_hi[k]);
            assert!(f.lambda_lo[k] > 0.0 && f.lambda_hi[k] < 1.0);
            assert!(f.lambda_lo[k] <= f.lambda_mean[k] && f.lambda_mean[k] <= f.lambda_hi[k]);
        }
        let csv = forecast_csv(&[f]);
        assert!(csv.starts_with(FORECAST_HEADER));
        assert_eq!(csv.lines().count(), 1 + s.len());
    }

    #[test]
    fn unknown_subject_and_empty_ticks_error() {
        let (draws, series) = one_subject_draws(Mode::Jhgp, 0.05, 0.8, -0.5);
        let cfg = FitConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(forecast_subject(&draws, &cfg, &series, &[], &mut rng).is_err());
        let mut other = series.clone();
        other.subject_id = "zz".into();
        assert!(forecast_subject(&draws, &cfg, &other, &[5], &mut rng).is_err());
    }

    #[test]
    fn forecast_all_is_deterministic() {
        let (draws, series) = one_subject_draws(Mode::Jhgp, 0.05, 0.8, -0.5);
        let cfg = FitConfig::default();
        let req = vec![(series.clone(), vec![5, 6, 7]), (series, vec![8, 9])];
        let a = forecast_all(&draws, &cfg, &req, 9).unwrap();
        let b = forecast_all(&draws, &cfg, &req, 9).unwrap();
        assert_eq!(forecast_csv(&a), forecast_csv(&b));
    }
}
