//! Prior reproduction: alternating full sweeps with re-simulation of the data
//! from the current parameters must leave the joint prior invariant.

use jhgp::data_model::SubjectSeries;
use jhgp::gp_core::{mvn_sample, GaussianDist};
use jhgp::kernels::{cov_matrix, KernelSpec};
use jhgp::priors::{
    sample_inv_gamma, CenterPrior, PriorConfig, PsiScalePrior, ScalePrior, ThetaPrior,
};
use jhgp::sampler::{FitConfig, FitData, GibbsSampler, Mode, ModelState};
use jhgp::survival::logit_inv;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const RHO_LO: f64 = -0.95;
const RHO_HI: f64 = -0.05;

fn tiny_series() -> Vec<SubjectSeries> {
    (0..2)
        .map(|i| {
            SubjectSeries::new(
                format!("s{i}"),
                vec![1, 2, 3, 4],
                vec![0.0; 4],
                vec![1, 2, 3, 4],
                vec![0, 0, 0, 1],
            )
            .unwrap()
        })
        .collect()
}

fn config(mode: Mode, half_cauchy: bool) -> FitConfig {
    let mut cfg = FitConfig {
        mode,
        ..FitConfig::default()
    };
    cfg.kernel_mu_y = KernelSpec::squared_exponential(2.0).with_jitter(1e-6);
    cfg.kernel_mu_h = KernelSpec::squared_exponential(2.0).with_jitter(1e-6);
    cfg.priors = PriorConfig {
        sigma2_y: ScalePrior::InverseGamma {
            shape: 3.0,
            scale: 0.5,
        },
        sigma2_mu_y: ScalePrior::InverseGamma {
            shape: 3.0,
            scale: 2.0,
        },
        sigma2_mu_h: ScalePrior::InverseGamma {
            shape: 3.0,
            scale: 2.0,
        },
        g_gamma: ScalePrior::InverseGamma {
            shape: 3.0,
            scale: 8.0,
        },
        g_eta: ScalePrior::InverseGamma {
            shape: 3.0,
            scale: 8.0,
        },
        g_phi: ScalePrior::InverseGamma {
            shape: 3.0,
            scale: 8.0,
        },
        mu_phi: CenterPrior::Fixed { value: 0.3 },
        theta_psi: ThetaPrior::Jeffreys {
            lower: RHO_LO,
            upper: RHO_HI,
        },
        theta_mu_y: ThetaPrior::Fixed,
        theta_mu_h: ThetaPrior::Fixed,
        psi_scale: if half_cauchy {
            PsiScalePrior::HalfCauchy { tau_scale: 1.0 }
        } else {
            PsiScalePrior::Fixed { sigma2: 0.6 }
        },
    };
    cfg
}

fn ig(p: &ScalePrior, rng: &mut ChaCha8Rng) -> f64 {
    match *p {
        ScalePrior::InverseGamma { shape, scale } => sample_inv_gamma(shape, scale, rng),
        _ => unreachable!(),
    }
}

/// Rejection draw of `ρ` from the bounded Jeffreys prior.
fn draw_rho(grid: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let dens = |r: f64| {
        jhgp::priors::jeffreys_shared_theta_logprior(
            &KernelSpec::ar1(r),
            &[grid.to_vec(), grid.to_vec()],
        )
    };
    let top = (0..=400)
        .map(|k| dens(RHO_LO + (RHO_HI - RHO_LO) * k as f64 / 400.0))
        .fold(f64::MIN, f64::max)
        + 0.05;
    loop {
        let r = RHO_LO + (RHO_HI - RHO_LO) * rng.random::<f64>();
        if rng.random::<f64>().ln() < dens(r) - top {
            return r;
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws every parameter from the prior into `st`.
fn draw_prior(s: &GibbsSampler, st: &mut ModelState, rng: &mut ChaCha8Rng) {
    let cfg = &s.cfg;
    let d = &s.data;
    let mode = d.mode;
    if mode.has_longitudinal() {
        st.sigma2_y = ig(&cfg.priors.sigma2_y, rng);
        st.prior.g_gamma = ig(&cfg.priors.g_gamma, rng);
        st.sigma2_mu_y = ig(&cfg.priors.sigma2_mu_y, rng);
    }
    if mode.has_survival() {
        st.prior.g_eta = ig(&cfg.priors.g_eta, rng);
        st.sigma2_mu_h = ig(&cfg.priors.sigma2_mu_h, rng);
    }
    draw_scales(s, st, rng);
    st.theta_psi = draw_rho(&d.shapes[0], rng);
    let zero = DVector::zeros(d.global.len());
    if mode.has_longitudinal() {
        let cov = cov_matrix(
            &s.mean_kernel(st, jhgp::sampler::Channel::Longitudinal),
            &d.global_f64,
            st.sigma2_mu_y,
        )
        .unwrap();
        st.mu_y = mvn_sample(&GaussianDist::new(zero.clone(), cov).unwrap(), rng).unwrap();
    }
    if mode.has_survival() {
        let cov = cov_matrix(
            &s.mean_kernel(st, jhgp::sampler::Channel::Survival),
            &d.global_f64,
            st.sigma2_mu_h,
        )
        .unwrap();
        st.mu_h = mvn_sample(&GaussianDist::new(zero, cov).unwrap(), rng).unwrap();
    }
    draw_individual(s, st, rng);
    if mode.samples_phi() {
        st.prior.g_phi = ig(&cfg.priors.g_phi, rng);
        st.phi = st.prior.mu_phi + (st.prior.g_phi / st.psi_energy()).sqrt() * normal(rng);
    }
}

/// Half-Cauchy hierarchy for the individual scales.
fn draw_scales(s: &GibbsSampler, st: &mut ModelState, rng: &mut ChaCha8Rng) {
    if !matches!(s.cfg.priors.psi_scale, PsiScalePrior::HalfCauchy { .. }) {
        return;
    }
    let scale2 = if s.data.mode.has_longitudinal() {
        st.sigma2_y
    } else {
        1.0
    };
    st.prior.xi = sample_inv_gamma(0.5, 1.0 / scale2, rng);
    st.prior.tau2 = sample_inv_gamma(0.5, 1.0 / st.prior.xi, rng);
    for i in 0..s.data.subjects.len() {
        st.prior.a_psi[i] = sample_inv_gamma(0.5, 1.0 / st.prior.tau2, rng);
        st.sigma2_psi[i] = sample_inv_gamma(0.5, 1.0 / st.prior.a_psi[i], rng);
    }
}

/// `ψ_i`, `γ_i` and `η_i` given the scales.
fn draw_individual(s: &GibbsSampler, st: &mut ModelState, rng: &mut ChaCha8Rng) {
    let d = &s.data;
    let mode = d.mode;
    for i in 0..d.subjects.len() {
        let cov = s.psi_prior_cov(st, i).unwrap();
        st.psi[i] = mvn_sample(
            &GaussianDist::new(DVector::zeros(cov.dim()), cov).unwrap(),
            rng,
        )
        .unwrap();
        let n = d.subjects[i].n() as f64;
        if mode.has_longitudinal() {
            st.gamma[i] = (st.prior.g_gamma * st.sigma2_y / n).sqrt() * normal(rng);
        }
        if mode.has_survival() {
            st.eta[i] = (st.prior.g_eta / n).sqrt() * normal(rng);
        }
    }
}

/// Re-simulates both data channels from the parameters in `st`.
fn draw_data(s: &mut GibbsSampler, st: &ModelState, rng: &mut ChaCha8Rng) {
    for i in 0..s.data.subjects.len() {
        let sd = st.sigma2_y.sqrt();
        for j in 0..s.data.subjects[i].obs.len() {
            let o = s.data.subjects[i].obs[j];
            let mean = st.gamma[i] + st.mu_y[o.global] + st.psi[i][o.local];
            s.data.subjects[i].obs[j].y = mean + sd * normal(rng);
        }
        for e in 0..s.data.subjects[i].events.len() {
            let h = st.logit_hazard(&s.data, i, e);
            s.data.subjects[i].events[e].r = u8::from(rng.random::<f64>() < logit_inv(h));
        }
    }
}

type Stat = (&'static str, fn(&ModelState) -> f64);

fn stats(mode: Mode) -> Vec<Stat> {
    let mut v: Vec<Stat> = vec![
        ("rho", |s| s.theta_psi),
        ("rho^2", |s| s.theta_psi * s.theta_psi),
        ("psi0[1]", |s| s.psi[0][1]),
        ("psi1[3]^2", |s| s.psi[1][3].powi(2)),
    ];
    if mode.has_longitudinal() {
        v.push(("log sigma2_y", |s| s.sigma2_y.ln()));
        v.push(("atan gamma0", |s| s.gamma[0].atan()));
        v.push(("mu_y[0]", |s| s.mu_y[0]));
        v.push(("log g_gamma", |s| s.prior.g_gamma.ln()));
        v.push(("log sigma2_mu_y", |s| s.sigma2_mu_y.ln()));
    }
    if mode.has_survival() {
        v.push(("mu_h[2]", |s| s.mu_h[2]));
        v.push(("atan eta1", |s| s.eta[1].atan()));
        v.push(("log g_eta", |s| s.prior.g_eta.ln()));
    }
    if mode.samples_phi() {
        v.push(("atan phi", |s| (s.phi - 0.3).atan()));
        v.push(("atan^2 phi", |s| (s.phi - 0.3).atan().powi(2)));
        v.push(("log g_phi", |s| s.prior.g_phi.ln()));
    }
    v
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let nb = 50usize;
    let bs = x.len() / nb;
    let bm: Vec<f64> = (0..nb)
        .map(|b| x[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64)
        .collect();
    let v = bm.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / (nb as f64 - 1.0);
    (m, (v / nb as f64).sqrt())
}

fn compare(
    names: &[&str],
    forward: &[Vec<f64>],
    chain: &[Vec<f64>],
) -> Vec<(String, f64, f64, f64)> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (mf, sf) = mean_se(&forward[k]);
            let (mc, sc) = mean_se(&chain[k]);
            let z = (mf - mc) / (sf * sf + sc * sc).sqrt();
            (name.to_string(), mf, mc, z)
        })
        .collect()
}

pub fn geweke(mode: Mode, cycles: usize, seed: u64) -> Vec<(String, f64, f64, f64)> {
    let cfg = config(mode, false);
    let data = FitData::new(&tiny_series(), mode).unwrap();
    let mut s = GibbsSampler::new(data, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let st_template = s.init_state().unwrap();
    let tests = stats(mode);

    let mut forward: Vec<Vec<f64>> = vec![Vec::new(); tests.len()];
    for _ in 0..cycles {
        let mut st = st_template.clone();
        draw_prior(&s, &mut st, &mut rng);
        for (k, (_, f)) in tests.iter().enumerate() {
            forward[k].push(f(&st));
        }
    }

    let mut st = st_template.clone();
    draw_prior(&s, &mut st, &mut rng);
    draw_data(&mut s, &st, &mut rng);
    let burn = cycles / 10;
    let mut chain: Vec<Vec<f64>> = vec![Vec::new(); tests.len()];
    for it in 0..burn + cycles {
        if it == burn {
            s.freeze_adaptation();
        }
        s.sweep(&mut st, &mut rng, it).unwrap();
        draw_data(&mut s, &st, &mut rng);
        if it >= burn {
            for (k, (_, f)) in tests.iter().enumerate() {
                chain[k].push(f(&st));
            }
        }
    }
    let names: Vec<&str> = tests.iter().map(|t| t.0).collect();
    compare(&names, &forward, &chain)
}

/// Only the noise variance and the scale hierarchy are updated; everything
/// they condition on is redrawn from its prior given the new scales.
pub fn geweke_scales(mode: Mode, cycles: usize, seed: u64) -> Vec<(String, f64, f64, f64)> {
    let cfg = config(mode, true);
    let data = FitData::new(&tiny_series(), mode).unwrap();
    let mut s = GibbsSampler::new(data, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = s.init_state().unwrap();
    let mut tests: Vec<Stat> = vec![
        ("log sigma2_psi0", |s| s.sigma2_psi[0].ln()),
        ("log sigma2_psi1^2", |s| s.sigma2_psi[1].ln().powi(2)),
        ("log tau2", |s| s.prior.tau2.ln()),
        ("log xi", |s| s.prior.xi.ln()),
        ("log a0", |s| s.prior.a_psi[0].ln()),
    ];
    if mode.has_longitudinal() {
        tests.push(("log sigma2_y", |s| s.sigma2_y.ln()));
    }
    let fresh = |s: &mut GibbsSampler, st: &mut ModelState, rng: &mut ChaCha8Rng| {
        if mode.has_longitudinal() {
            st.sigma2_y = ig(&s.cfg.priors.sigma2_y, rng);
        }
        draw_scales(s, st, rng);
        draw_individual(s, st, rng);
    };
    let mut forward: Vec<Vec<f64>> = vec![Vec::new(); tests.len()];
    for _ in 0..cycles {
        fresh(&mut s, &mut st, &mut rng);
        for (k, (_, f)) in tests.iter().enumerate() {
            forward[k].push(f(&st));
        }
    }
    fresh(&mut s, &mut st, &mut rng);
    draw_data(&mut s, &st, &mut rng);
    let mut chain: Vec<Vec<f64>> = vec![Vec::new(); tests.len()];
    for _ in 0..cycles {
        if mode.has_longitudinal() {
            s.update_sigma2_y(&mut st, &mut rng);
        }
        s.update_psi_scales(&mut st, &mut rng).unwrap();
        draw_individual(&s, &mut st, &mut rng);
        draw_data(&mut s, &st, &mut rng);
        for (k, (_, f)) in tests.iter().enumerate() {
            chain[k].push(f(&st));
        }
    }
    let names: Vec<&str> = tests.iter().map(|t| t.0).collect();
    compare(&names, &forward, &chain)
}

pub fn cycles(default: usize) -> usize {
    std::env::var("GEWEKE_CYCLES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

pub fn check(label: &str, rows: Vec<(String, f64, f64, f64)>) -> bool {
    let mut ok = true;
    for (name, mf, mc, z) in rows {
        eprintln!("{label} {name:18} prior {mf:9.4}  chain {mc:9.4}  z {z:6.2}");
        ok &= z.abs() < 3.0;
    }
    ok
}
