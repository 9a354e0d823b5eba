//! Oracles for the sampler's closed-form blocks. The augmented log joint is
//! written out term by term; a Gaussian block's precision and linear term are
//! read off it by second differences, which are exact for a quadratic, and a
//! scale block's conditional is integrated on a log grid.

use jhgp::kernels::CovMatrix;
use jhgp::priors::{PsiScalePrior, ScalePrior};
use jhgp::sampler::{Channel, FitConfig, FitData, GibbsSampler, Mode, ModelState};
use jhgp::simulate::{simulate_dataset, SimConfig};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Fixture {
    pub s: GibbsSampler,
    pub st: ModelState,
}

/// A small Sim-1 dataset, a sampler a few sweeps in and freshly drawn `ω`.
pub fn fixture(mode: Mode, seed: u64) -> Fixture {
    let mut sim = SimConfig::preset("sim1").unwrap();
    sim.n_subjects = 6;
    sim.n_ticks = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (series, _) = simulate_dataset(&sim, &mut rng).unwrap();
    let data = FitData::new(&series, mode).unwrap();
    let mut s = GibbsSampler::new(
        data,
        FitConfig {
            mode,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let mut st = s.init_state().unwrap();
    for it in 0..20 {
        s.sweep(&mut st, &mut rng, it).unwrap();
    }
    if mode.has_survival() {
        s.update_omega(&mut st, &mut rng);
    }
    Fixture { s, st }
}

fn gauss_logpdf(cov: &CovMatrix, x: &DVector<f64>) -> f64 {
    let c = Cholesky::new(cov.matrix().clone()).expect("positive definite");
    let z = c.l().solve_lower_triangular(x).unwrap();
    let log_det: f64 = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * z.norm_squared() - 0.5 * log_det
}

/// `log IG(x | shape, scale)` without the `Γ(shape)` constant.
fn log_ig(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - (shape + 1.0) * x.ln() - scale / x
}

fn log_scale_prior(p: &ScalePrior, x: f64, n_obs: f64) -> f64 {
    match *p {
        ScalePrior::Jeffreys => -x.ln(),
        ScalePrior::InverseGamma { shape, scale } => log_ig(x, shape, scale),
        ScalePrior::ZellnerSiow => log_ig(x, 0.5, 0.5 * n_obs),
        ScalePrior::Fixed { .. } => 0.0,
    }
}

/// Log density of the data, `ω`-augmented events and every prior term the
/// closed-form blocks touch. The `(Σψ'ψ)^{1/2}` factor of the association
/// prior is included only when `psi_energy_factor` is set.
pub fn log_joint(s: &GibbsSampler, st: &ModelState, psi_energy_factor: bool) -> f64 {
    let d = &s.data;
    let mode = d.mode;
    let pri = &s.cfg.priors;
    let mut lp = 0.0;
    for (i, sub) in d.subjects.iter().enumerate() {
        let n = sub.n() as f64;
        if mode.has_longitudinal() {
            for o in &sub.obs {
                let r = o.y - st.gamma[i] - st.mu_y[o.global] - st.psi[i][o.local];
                lp += -0.5 * st.sigma2_y.ln() - r * r / (2.0 * st.sigma2_y);
            }
            let v = st.prior.g_gamma * st.sigma2_y / n;
            lp += -0.5 * v.ln() - st.gamma[i] * st.gamma[i] / (2.0 * v);
        }
        if mode.has_survival() {
            for (e, ev) in sub.events.iter().enumerate() {
                let h = st.eta[i] + st.mu_h[ev.global] + st.phi * st.psi[i][ev.local];
                lp += (ev.r as f64 - 0.5) * h - 0.5 * st.omega[i][e] * h * h;
            }
            let v = st.prior.g_eta / n;
            lp += -0.5 * v.ln() - st.eta[i] * st.eta[i] / (2.0 * v);
        }
        lp += gauss_logpdf(&s.psi_prior_cov(st, i).unwrap(), &st.psi[i]);
    }
    if mode.has_longitudinal() {
        lp += gauss_logpdf(
            &s.mean_prior_cov(st, Channel::Longitudinal).unwrap(),
            &st.mu_y,
        );
        lp += log_scale_prior(&pri.sigma2_y, st.sigma2_y, d.n_obs() as f64);
        lp += log_scale_prior(&pri.sigma2_mu_y, st.sigma2_mu_y, d.global.len() as f64);
        lp += log_scale_prior(&pri.g_gamma, st.prior.g_gamma, d.n_obs() as f64);
    }
    if mode.has_survival() {
        lp += gauss_logpdf(&s.mean_prior_cov(st, Channel::Survival).unwrap(), &st.mu_h);
        lp += log_scale_prior(&pri.sigma2_mu_h, st.sigma2_mu_h, d.global.len() as f64);
        lp += log_scale_prior(&pri.g_eta, st.prior.g_eta, d.n_event_slots() as f64);
    }
    if mode.samples_phi() {
        let energy = st.psi_energy();
        let dphi = st.phi - st.prior.mu_phi;
        lp += -0.5 * st.prior.g_phi.ln() - energy * dphi * dphi / (2.0 * st.prior.g_phi);
        if psi_energy_factor {
            lp += 0.5 * energy.ln();
        }
        lp += log_scale_prior(&pri.g_phi, st.prior.g_phi, d.n_event_slots() as f64);
    }
    if let PsiScalePrior::HalfCauchy { tau_scale } = pri.psi_scale {
        let s2 = if mode.has_longitudinal() {
            st.sigma2_y
        } else {
            tau_scale * tau_scale
        };
        lp += log_ig(st.prior.xi, 0.5, 1.0 / s2);
        lp += log_ig(st.prior.tau2, 0.5, 1.0 / st.prior.xi);
        for (a, v) in st.prior.a_psi.iter().zip(&st.sigma2_psi) {
            lp += log_ig(*a, 0.5, 1.0 / st.prior.tau2);
            lp += log_ig(*v, 0.5, 1.0 / a);
        }
    }
    lp
}

/// Mean and covariance of the Gaussian whose log density is `f` up to a
/// constant, from differences at unit steps around 0.
pub fn gaussian_oracle(f: impl Fn(&DVector<f64>) -> f64, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let unit = |i: usize| DVector::from_fn(d, |k, _| if k == i { 1.0 } else { 0.0 });
    let f0 = f(&DVector::zeros(d));
    let fp: Vec<f64> = (0..d).map(|i| f(&unit(i))).collect();
    let fm: Vec<f64> = (0..d).map(|i| f(&(-unit(i)))).collect();
    let b = DVector::from_fn(d, |i, _| 0.5 * (fp[i] - fm[i]));
    let mut q = DMatrix::zeros(d, d);
    for i in 0..d {
        q[(i, i)] = -(fp[i] + fm[i] - 2.0 * f0);
        for j in 0..i {
            let v = -(f(&(unit(i) + unit(j))) - fp[i] - fp[j] + f0);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    let cov = q
        .try_inverse()
        .expect("conditional precision is invertible");
    let mean = &cov * b;
    (mean, cov)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
}

/// z-scores of the sample mean and variance of `c'x` against `N(c'm, c'Σc)`.
pub fn moment_z(
    samples: &[DVector<f64>],
    c: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> (f64, f64) {
    let n = samples.len() as f64;
    let v: Vec<f64> = samples.iter().map(|x| c.dot(x)).collect();
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    let tm = c.dot(mean);
    let tv = (c.transpose() * cov * c)[(0, 0)];
    (
        (m - tm) / (tv / n).sqrt(),
        (var - tv) / (tv * (2.0 / (n - 1.0)).sqrt()),
    )
}

/// Posterior mean and variance of `g(x)` under the unnormalized log density
/// `logc` of a positive scalar, by trapezoid on `u = ln x` over `[lo, hi]`.
pub fn log_grid_moments(
    logc: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
) -> (f64, f64) {
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let u = lo + h * k as f64;
            (u, logc(u.exp()) + u)
        })
        .collect();
    let top = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, &(u, l)) in pts.iter().enumerate() {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 } * (l - top).exp();
        let gv = g(u.exp());
        z += w;
        m1 += w * gv;
        m2 += w * gv * gv;
    }
    let m = m1 / z;
    (m, m2 / z - m * m)
}

/// One named block result: the largest relative disagreement of the
/// closed-form conditional with the oracle, and the sampling z-scores.
pub struct BlockCheck {
    pub name: String,
    pub rel_err: f64,
    pub z: Vec<f64>,
}

impl BlockCheck {
    pub fn pass(&self) -> bool {
        self.rel_err < 1e-6 && self.z.iter().all(|z| z.abs() < 3.0)
    }
}

fn draws() -> usize {
    std::env::var("COND_DRAWS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(4_000)
}

fn contrast(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))
}

fn gaussian_block(
    name: &str,
    fx: &mut Fixture,
    oracle: (DVector<f64>, DMatrix<f64>),
    library: (DVector<f64>, DMatrix<f64>),
    mut draw: impl FnMut(&mut GibbsSampler, &mut ModelState, &mut ChaCha8Rng) -> DVector<f64>,
    seed: u64,
) -> BlockCheck {
    let (om, oc) = oracle;
    let (lm, lc) = library;
    let scale = oc.diagonal().iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
    let mean_err = (&lm - &om).amax() / (om.amax() + scale);
    let rel = mean_err.max(rel_err(&lc, &oc));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<DVector<f64>> = (0..draws())
        .map(|_| {
            let mut st = fx.st.clone();
            draw(&mut fx.s, &mut st, &mut rng)
        })
        .collect();
    let (zm, zv) = moment_z(&samples, &contrast(om.len(), seed + 1), &om, &oc);
    BlockCheck {
        name: name.into(),
        rel_err: rel,
        z: vec![zm, zv],
    }
}

fn scale_block(
    name: &str,
    fx: &mut Fixture,
    set: impl Fn(&mut ModelState, f64),
    mut draw: impl FnMut(&mut GibbsSampler, &mut ModelState, &mut ChaCha8Rng) -> f64,
    seed: u64,
) -> BlockCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logs: Vec<f64> = (0..draws())
        .map(|_| {
            let mut st = fx.st.clone();
            draw(&mut fx.s, &mut st, &mut rng).ln()
        })
        .collect();
    let lo = logs.iter().copied().fold(f64::MAX, f64::min) - 8.0;
    let hi = logs.iter().copied().fold(f64::MIN, f64::max) + 8.0;
    let base = fx.st.clone();
    let logc = |x: f64| {
        let mut st = base.clone();
        set(&mut st, x);
        log_joint(&fx.s, &st, true)
    };
    let (m, v) = log_grid_moments(logc, f64::ln, lo, hi);
    let n = logs.len() as f64;
    let sm = logs.iter().sum::<f64>() / n;
    BlockCheck {
        name: name.into(),
        rel_err: 0.0,
        z: vec![(sm - m) / (v / n).sqrt()],
    }
}

fn scalar(m: f64, v: f64) -> (DVector<f64>, DMatrix<f64>) {
    (DVector::from_element(1, m), DMatrix::from_element(1, 1, v))
}

fn mean_checks(fx: &mut Fixture, ch: Channel, name: &str, seed: u64) -> BlockCheck {
    let dim = fx.s.data.global.len();
    let base = fx.st.clone();
    let set = move |st: &mut ModelState, x: &DVector<f64>| match ch {
        Channel::Longitudinal => st.mu_y = x.clone(),
        Channel::Survival => st.mu_h = x.clone(),
    };
    let oracle = gaussian_oracle(
        |x| {
            let mut st = base.clone();
            set(&mut st, x);
            log_joint(&fx.s, &st, true)
        },
        dim,
    );
    let lib = fx.s.mean_conditional(&fx.st, ch).unwrap();
    let library = (lib.mean.clone(), lib.cov.matrix().clone());
    gaussian_block(
        name,
        fx,
        oracle,
        library,
        |s, st, rng| {
            s.update_mean(st, ch, rng).unwrap();
            match ch {
                Channel::Longitudinal => st.mu_y.clone(),
                Channel::Survival => st.mu_h.clone(),
            }
        },
        seed,
    )
}

/// Exact Gaussian conditional of `ψ_i`; valid where no association prior
/// couples the subjects.
fn psi_exact(fx: &mut Fixture, i: usize, name: &str, seed: u64) -> BlockCheck {
    let dim = fx.s.data.subjects[i].n();
    let base = fx.st.clone();
    let oracle = gaussian_oracle(
        |x| {
            let mut st = base.clone();
            st.psi[i] = x.clone();
            log_joint(&fx.s, &st, false)
        },
        dim,
    );
    let lib = fx.s.psi_conditional(&fx.st, i).unwrap();
    let library = (lib.mean.clone(), lib.cov.matrix().clone());
    gaussian_block(
        name,
        fx,
        oracle,
        library,
        |s, st, rng| {
            s.update_psi(st, i, rng).unwrap();
            st.psi[i].clone()
        },
        seed,
    )
}

/// Joint mode: the `ψ_i` update is a Metropolis step whose target carries the
/// `(Σψ'ψ)^{1/2}` factor. The chain mean of a contrast is compared with a
/// self-normalized importance estimate under the Gaussian part.
fn psi_joint(fx: &mut Fixture, i: usize, seed: u64) -> BlockCheck {
    let dim = fx.s.data.subjects[i].n();
    let base = fx.st.clone();
    let (om, oc) = gaussian_oracle(
        |x| {
            let mut st = base.clone();
            st.psi[i] = x.clone();
            log_joint(&fx.s, &st, false)
        },
        dim,
    );
    let lib = fx.s.psi_conditional(&fx.st, i).unwrap();
    let scale = oc.diagonal().iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
    let rel = ((&lib.mean - &om).amax() / (om.amax() + scale)).max(rel_err(lib.cov.matrix(), &oc));

    let c = contrast(dim, seed + 1);
    let others = base.psi_energy() - base.psi[i].norm_squared();
    let l = Cholesky::new(oc.clone()).unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let m_is = 400_000;
    let (mut sw, mut swf, mut swf2, mut sw2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..m_is {
        let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let x = &om + &l * z;
        let w = (others + x.norm_squared()).sqrt();
        let f = c.dot(&x);
        sw += w;
        swf += w * f;
        swf2 += w * f * f;
        sw2 += w * w;
    }
    let e_is = swf / sw;
    let var_f = swf2 / sw - e_is * e_is;
    let ess = sw * sw / sw2;
    let se_is2 = var_f / ess;

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let mut st = base.clone();
    let n_chain = 50_000;
    let vals: Vec<f64> = (0..n_chain)
        .map(|_| {
            fx.s.update_psi(&mut st, i, &mut rng).unwrap();
            c.dot(&st.psi[i])
        })
        .collect();
    let nb = 50;
    let bs = n_chain / nb;
    let cm = vals.iter().sum::<f64>() / n_chain as f64;
    let bm: Vec<f64> = (0..nb)
        .map(|b| vals[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64)
        .collect();
    let se_c2 = bm.iter().map(|b| (b - cm) * (b - cm)).sum::<f64>() / (nb as f64 - 1.0) / nb as f64;
    BlockCheck {
        name: "psi (joint, Metropolis-corrected)".into(),
        rel_err: rel,
        z: vec![(cm - e_is) / (se_c2 + se_is2).sqrt()],
    }
}

fn scalar_checks(fx: &mut Fixture, seed: u64) -> Vec<BlockCheck> {
    let mode = fx.s.data.mode;
    let mut out = Vec::new();
    let base = fx.st.clone();
    if mode.has_longitudinal() {
        let oracle = gaussian_oracle(
            |x| {
                let mut st = base.clone();
                st.gamma[0] = x[0];
                log_joint(&fx.s, &st, true)
            },
            1,
        );
        let (m, v) = fx.s.gamma_conditional(&fx.st, 0);
        out.push(gaussian_block(
            "gamma",
            fx,
            oracle,
            scalar(m, v),
            |s, st, rng| {
                s.update_gamma(st, rng);
                DVector::from_element(1, st.gamma[0])
            },
            seed,
        ));
    }
    if mode.has_survival() {
        let oracle = gaussian_oracle(
            |x| {
                let mut st = base.clone();
                st.eta[1] = x[0];
                log_joint(&fx.s, &st, true)
            },
            1,
        );
        let (m, v) = fx.s.eta_conditional(&fx.st, 1);
        out.push(gaussian_block(
            "eta",
            fx,
            oracle,
            scalar(m, v),
            |s, st, rng| {
                s.update_eta(st, rng);
                DVector::from_element(1, st.eta[1])
            },
            seed + 10,
        ));
    }
    if mode.samples_phi() {
        let oracle = gaussian_oracle(
            |x| {
                let mut st = base.clone();
                st.phi = x[0];
                log_joint(&fx.s, &st, true)
            },
            1,
        );
        let (m, v) = fx.s.phi_conditional(&fx.st);
        out.push(gaussian_block(
            "phi",
            fx,
            oracle,
            scalar(m, v),
            |s, st, rng| {
                s.update_phi(st, rng);
                DVector::from_element(1, st.phi)
            },
            seed + 20,
        ));
    }
    out
}

fn scale_checks(fx: &mut Fixture, seed: u64) -> Vec<BlockCheck> {
    let mode = fx.s.data.mode;
    let mut out = Vec::new();
    if mode.has_longitudinal() {
        out.push(scale_block(
            "sigma2_y",
            fx,
            |st, x| st.sigma2_y = x,
            |s, st, rng| {
                s.update_sigma2_y(st, rng);
                st.sigma2_y
            },
            seed,
        ));
        out.push(scale_block(
            "sigma2_mu_y",
            fx,
            |st, x| st.sigma2_mu_y = x,
            |s, st, rng| {
                s.update_sigma2_mean(st, Channel::Longitudinal, rng)
                    .unwrap();
                st.sigma2_mu_y
            },
            seed + 1,
        ));
        out.push(scale_block(
            "g_gamma",
            fx,
            |st, x| st.prior.g_gamma = x,
            |s, st, rng| {
                s.update_g(st, rng);
                st.prior.g_gamma
            },
            seed + 2,
        ));
    }
    if mode.has_survival() {
        out.push(scale_block(
            "sigma2_mu_h",
            fx,
            |st, x| st.sigma2_mu_h = x,
            |s, st, rng| {
                s.update_sigma2_mean(st, Channel::Survival, rng).unwrap();
                st.sigma2_mu_h
            },
            seed + 3,
        ));
        out.push(scale_block(
            "g_eta",
            fx,
            |st, x| st.prior.g_eta = x,
            |s, st, rng| {
                s.update_g(st, rng);
                st.prior.g_eta
            },
            seed + 4,
        ));
    }
    if mode.samples_phi() {
        out.push(scale_block(
            "g_phi",
            fx,
            |st, x| st.prior.g_phi = x,
            |s, st, rng| {
                s.update_g(st, rng);
                st.prior.g_phi
            },
            seed + 5,
        ));
    }
    out.push(scale_block(
        "sigma2_psi",
        fx,
        |st, x| st.sigma2_psi[2] = x,
        |s, st, rng| {
            s.update_psi_scales(st, rng).unwrap();
            st.sigma2_psi[2]
        },
        seed + 6,
    ));
    out
}

/// Every closed-form block of every mode.
pub fn all_blocks() -> Vec<BlockCheck> {
    let mut out = Vec::new();
    let mut j = fixture(Mode::Jhgp, 21);
    out.push(mean_checks(&mut j, Channel::Longitudinal, "mu_y", 100));
    out.push(mean_checks(&mut j, Channel::Survival, "mu_h", 110));
    out.push(psi_joint(&mut j, 0, 120));
    out.extend(scalar_checks(&mut j, 130));
    out.extend(scale_checks(&mut j, 160));

    let mut h = fixture(Mode::HgpOnly, 22);
    out.push(psi_exact(&mut h, 1, "psi (longitudinal only)", 200));
    let mut v = fixture(Mode::SurvivalOnly, 23);
    out.push(psi_exact(&mut v, 1, "psi (survival only)", 300));
    out.push(scale_block(
        "sigma2_psi (survival only)",
        &mut v,
        |st, x| st.sigma2_psi[0] = x,
        |s, st, rng| {
            s.update_psi_scales(st, rng).unwrap();
            st.sigma2_psi[0]
        },
        310,
    ));
    out
}
