//! Multivariate normal primitives, GP conditioning and Kriging.
//!
//! Every solve goes through a Cholesky factor; no covariance is ever inverted.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{cholesky_with_jitter, CovMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub cov: CovMatrix,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, cov: CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(GaussianDist { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal standard deviations.
    pub fn sd(&self) -> DVector<f64> {
        self.cov.matrix().diagonal().map(|v| v.max(0.0).sqrt())
    }
}

pub fn mvn_logpdf(x: &DVector<f64>, dist: &GaussianDist) -> Result<f64> {
    if x.len() != dist.dim() {
        return Err(Error::Dimension(format!(
            "point has length {} but distribution has dimension {}",
            x.len(),
            dist.dim()
        )));
    }
    let f = dist.cov.factor()?;
    let r = x - &dist.mean;
    Ok(-0.5 * (x.len() as f64 * LN_2PI + f.log_det() + f.quad_form(&r)))
}

/// `mean + L z` with `z` standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(dist: &GaussianDist, rng: &mut R) -> Result<DVector<f64>> {
    let f = dist.cov.factor()?;
    let z = standard_normal_vec(dist.dim(), rng);
    Ok(&dist.mean + f.l() * z)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// GP posterior of `f` given `y = f + ε`, `ε ~ N(0, noise_var·I)`:
/// `μ* = μ + Σ(Σ + σ²I)⁻¹(y − μ)`, `Σ* = Σ − Σ(Σ + σ²I)⁻¹Σ`.
pub fn gp_posterior(
    prior_mean: &DVector<f64>,
    prior_cov: &CovMatrix,
    y: &DVector<f64>,
    noise_var: f64,
) -> Result<GaussianDist> {
    let n = prior_mean.len();
    if prior_cov.dim() != n || y.len() != n {
        return Err(Error::Dimension(format!(
            "prior mean {n}, covariance {}, observations {}",
            prior_cov.dim(),
            y.len()
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::ParameterDomain(format!(
            "noise variance must be >= 0, got {noise_var}"
        )));
    }
    let obs: Vec<usize> = (0..n).collect();
    let noise = vec![noise_var; n];
    gp_posterior_partial(prior_mean, prior_cov.matrix(), &obs, y.as_slice(), &noise)
}

/// GP posterior when only the coordinates in `obs` are observed, each with
/// its own noise variance.
pub fn gp_posterior_partial(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    obs: &[usize],
    y: &[f64],
    noise: &[f64],
) -> Result<GaussianDist> {
    let n = prior_mean.len();
    let m = obs.len();
    if y.len() != m || noise.len() != m || prior_cov.nrows() != n || prior_cov.ncols() != n {
        return Err(Error::Dimension(
            "inconsistent partial-observation inputs".into(),
        ));
    }
    if m == 0 {
        return GaussianDist::new(prior_mean.clone(), CovMatrix::new(prior_cov.clone()));
    }
    let mut s_oo = DMatrix::from_fn(m, m, |a, b| prior_cov[(obs[a], obs[b])]);
    for (a, &v) in noise.iter().enumerate() {
        s_oo[(a, a)] += v;
    }
    let s_on = DMatrix::from_fn(m, n, |a, j| prior_cov[(obs[a], j)]);
    let f = cholesky_with_jitter(&s_oo)?;
    let w = f.solve_lower(&s_on);
    let resid = DVector::from_fn(m, |a, _| y[a] - prior_mean[obs[a]]);
    let z = f.solve_lower_vec(&resid);
    let mean = prior_mean + w.transpose() * z;
    let cov = prior_cov - w.transpose() * &w;
    GaussianDist::new(mean, CovMatrix::new(cov))
}

/// Kriging predictor at `s` given noisy observations at `t`:
/// `μ* = μ(s) + K(s,t)(Σ(t) + σ²I)⁻¹(y(t) − μ(t))`,
/// `Σ* = Σ(s) − K(s,t)(Σ(t) + σ²I)⁻¹K(s,t)ᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn krige(
    prior_mean_t: &DVector<f64>,
    prior_mean_s: &DVector<f64>,
    cov_tt: &CovMatrix,
    cov_ss: &CovMatrix,
    cov_st: &DMatrix<f64>,
    y_t: &DVector<f64>,
    noise_var: f64,
) -> Result<GaussianDist> {
    let nt = prior_mean_t.len();
    let ns = prior_mean_s.len();
    if cov_tt.dim() != nt || y_t.len() != nt {
        return Err(Error::Dimension(format!(
            "observed block: mean {nt}, covariance {}, data {}",
            cov_tt.dim(),
            y_t.len()
        )));
    }
    if cov_ss.dim() != ns || cov_st.nrows() != ns || cov_st.ncols() != nt {
        return Err(Error::Dimension(format!(
            "cross-covariance is {}x{}, expected {ns}x{nt}",
            cov_st.nrows(),
            cov_st.ncols()
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::ParameterDomain(format!(
            "noise variance must be >= 0, got {noise_var}"
        )));
    }
    let mut a = cov_tt.matrix().clone();
    for i in 0..nt {
        a[(i, i)] += noise_var;
    }
    let f = cholesky_with_jitter(&a)?;
    let w = f.solve_lower(&cov_st.transpose());
    let z = f.solve_lower_vec(&(y_t - prior_mean_t));
    let mean = prior_mean_s + w.transpose() * z;
    let cov = cov_ss.matrix() - w.transpose() * &w;
    GaussianDist::new(mean, CovMatrix::new(cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logpdf_at_mode_identity() {
        let d =
            GaussianDist::new(DVector::from_vec(vec![1.0, 2.0]), CovMatrix::identity(2)).unwrap();
        let lp = mvn_logpdf(&DVector::from_vec(vec![1.0, 2.0]), &d).unwrap();
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn logpdf_scalar_variance_four() {
        let d = GaussianDist::new(
            DVector::zeros(1),
            CovMatrix::new(DMatrix::from_element(1, 1, 4.0)),
        )
        .unwrap();
        let lp = mvn_logpdf(&DVector::zeros(1), &d).unwrap();
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI * 4.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        let d = GaussianDist::new(DVector::zeros(2), CovMatrix::identity(2)).unwrap();
        assert!(mvn_logpdf(&DVector::zeros(3), &d).is_err());
        assert!(GaussianDist::new(DVector::zeros(3), CovMatrix::identity(2)).is_err());
    }

    #[test]
    fn scalar_posterior() {
        let post = gp_posterior(
            &DVector::zeros(1),
            &CovMatrix::identity(1),
            &DVector::from_element(1, 2.0),
            1.0,
        )
        .unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-14);
        assert!((post.cov.matrix()[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn noiseless_posterior_interpolates() {
        let k = crate::kernels::KernelSpec::ar1(-0.6);
        let cov = crate::kernels::cov_matrix(&k, &[0.0, 1.0, 2.0], 1.5).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let post = gp_posterior(&DVector::zeros(3), &cov, &y, 0.0).unwrap();
        assert!((post.mean - y).amax() < 1e-9);
    }

    #[test]
    fn zero_signal_posterior_keeps_prior_mean() {
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let post = gp_posterior(
            &mean,
            &CovMatrix::new(DMatrix::zeros(2, 2)),
            &DVector::from_vec(vec![5.0, 5.0]),
            1.0,
        )
        .unwrap();
        assert!((post.mean - mean).amax() < 1e-12);
        assert!(post.cov.matrix().amax() < 1e-12);
    }

    #[test]
    fn huge_noise_returns_prior_mean() {
        let k = crate::kernels::KernelSpec::squared_exponential(2.0);
        let cov = crate::kernels::cov_matrix(&k, &[0.0, 1.0, 2.0, 3.0], 1.0).unwrap();
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let post = gp_posterior(&mean, &cov, &DVector::from_element(4, 10.0), 1e8).unwrap();
        for i in 0..4 {
            assert!((post.mean[i] - mean[i]).abs() < 1e-3 * mean[i].abs());
        }
    }

    #[test]
    fn sampling_degenerate_cov_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = DVector::from_vec(vec![3.0, -2.0]);
        let d = GaussianDist::new(mean.clone(), CovMatrix::new(DMatrix::zeros(2, 2))).unwrap();
        let x = mvn_sample(&d, &mut rng).unwrap();
        assert!((x - mean).amax() < 1e-4);
    }

    #[test]
    fn krige_zero_cross_cov_is_prior() {
        let k = crate::kernels::KernelSpec::ar1(-0.5);
        let tt = crate::kernels::cov_matrix(&k, &[0.0, 1.0], 1.0).unwrap();
        let ss = crate::kernels::cov_matrix(&k, &[5.0, 6.0, 7.0], 2.0).unwrap();
        let ms = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = krige(
            &DVector::zeros(2),
            &ms,
            &tt,
            &ss,
            &DMatrix::zeros(3, 2),
            &DVector::from_vec(vec![4.0, 4.0]),
            0.1,
        )
        .unwrap();
        assert_eq!(out.mean, ms);
        assert_eq!(out.cov.matrix(), ss.matrix());
    }

    #[test]
    fn krige_shape_mismatch() {
        let tt = CovMatrix::identity(2);
        let ss = CovMatrix::identity(1);
        assert!(krige(
            &DVector::zeros(2),
            &DVector::zeros(1),
            &tt,
            &ss,
            &DMatrix::zeros(2, 2),
            &DVector::zeros(2),
            0.0
        )
        .is_err());
    }
}
