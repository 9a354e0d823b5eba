//! Covariance-function families, realized covariance matrices and the
//! hyperparameter derivatives used by the reference priors.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal inflations tried in turn when a Cholesky factorization fails,
/// relative to the mean diagonal magnitude.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    /// `exp(-(Δt)² / 2λ²)`.
    SquaredExponential {
        length_scale: f64,
    },
    /// `ρ^|i-j|` with `-1 < ρ < 0`.
    Ar1 {
        rho: f64,
    },
    /// `min(s - origin + 1, t - origin + 1)`; the origin is the subject's first tick.
    BrownianMotion {
        origin: f64,
    },
    Sum(Box<KernelSpec>, Box<KernelSpec>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfig", into = "KernelConfig")]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Nonnegative diagonal inflation added to realized covariance matrices.
    pub jitter: f64,
}

impl KernelSpec {
    pub fn squared_exponential(length_scale: f64) -> Self {
        KernelSpec {
            family: KernelFamily::SquaredExponential { length_scale },
            jitter: 0.0,
        }
    }

    pub fn ar1(rho: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Ar1 { rho },
            jitter: 0.0,
        }
    }

    pub fn brownian(origin: f64) -> Self {
        KernelSpec {
            family: KernelFamily::BrownianMotion { origin },
            jitter: 0.0,
        }
    }

    pub fn sum(a: KernelSpec, b: KernelSpec) -> Self {
        KernelSpec {
            family: KernelFamily::Sum(Box::new(a), Box::new(b)),
            jitter: 0.0,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            KernelFamily::SquaredExponential { .. } => "squared_exponential",
            KernelFamily::Ar1 { .. } => "ar1",
            KernelFamily::BrownianMotion { .. } => "brownian_motion",
            KernelFamily::Sum(..) => "sum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "jitter must be >= 0, got {}",
                self.jitter
            )));
        }
        match &self.family {
            KernelFamily::SquaredExponential { length_scale } => {
                if !(*length_scale > 0.0) || !length_scale.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "length-scale must be > 0, got {length_scale}"
                    )));
                }
            }
            KernelFamily::Ar1 { rho } => {
                if !(*rho > -1.0 && *rho < 0.0) {
                    return Err(Error::ParameterDomain(format!(
                        "AR(1) rho must lie in (-1, 0), got {rho}"
                    )));
                }
            }
            KernelFamily::BrownianMotion { origin } => {
                if !origin.is_finite() {
                    return Err(Error::ParameterDomain("non-finite Brownian origin".into()));
                }
            }
            KernelFamily::Sum(a, b) => {
                a.validate()?;
                b.validate()?;
            }
        }
        Ok(())
    }

    /// Kernel value `k(a, b)`.
    pub fn value(&self, a: f64, b: f64) -> f64 {
        match &self.family {
            KernelFamily::SquaredExponential { length_scale } => {
                let d = a - b;
                (-d * d / (2.0 * length_scale * length_scale)).exp()
            }
            KernelFamily::Ar1 { rho } => rho.powi(lag(a, b)),
            KernelFamily::BrownianMotion { origin } => (a - origin + 1.0).min(b - origin + 1.0),
            KernelFamily::Sum(x, y) => x.value(a, b) + y.value(a, b),
        }
    }

    /// The single tunable hyperparameter, if the family has one.
    pub fn hyper(&self) -> Option<f64> {
        match self.family {
            KernelFamily::SquaredExponential { length_scale } => Some(length_scale),
            KernelFamily::Ar1 { rho } => Some(rho),
            _ => None,
        }
    }

    pub fn with_hyper(&self, value: f64) -> Self {
        let family = match &self.family {
            KernelFamily::SquaredExponential { .. } => KernelFamily::SquaredExponential {
                length_scale: value,
            },
            KernelFamily::Ar1 { .. } => KernelFamily::Ar1 { rho: value },
            other => other.clone(),
        };
        KernelSpec {
            family,
            jitter: self.jitter,
        }
    }

    /// Re-anchors Brownian components at `origin`; other families are unchanged.
    pub fn anchored(&self, origin: f64) -> Self {
        let family = match &self.family {
            KernelFamily::BrownianMotion { .. } => KernelFamily::BrownianMotion { origin },
            KernelFamily::Sum(a, b) => {
                KernelFamily::Sum(Box::new(a.anchored(origin)), Box::new(b.anchored(origin)))
            }
            other => other.clone(),
        };
        KernelSpec {
            family,
            jitter: self.jitter,
        }
    }

    /// Maps the hyperparameter to the real line: `log λ` or `logit(-ρ)`.
    pub fn to_unconstrained(&self, value: f64) -> Option<f64> {
        match self.family {
            KernelFamily::SquaredExponential { .. } => Some(value.ln()),
            KernelFamily::Ar1 { .. } => {
                let p = -value;
                Some((p / (1.0 - p)).ln())
            }
            _ => None,
        }
    }

    /// Inverse of [`to_unconstrained`](Self::to_unconstrained), with the log
    /// Jacobian `log |dθ/du|`.
    pub fn from_unconstrained(&self, u: f64) -> Option<(f64, f64)> {
        match self.family {
            KernelFamily::SquaredExponential { .. } => Some((u.exp(), u)),
            KernelFamily::Ar1 { .. } => {
                let s = sigmoid(u);
                let log_jac = -softplus(-u) - softplus(u);
                Some((-s, log_jac))
            }
            _ => None,
        }
    }

    /// `∂k(a, b)/∂θ` for the family's hyperparameter.
    pub fn d_value(&self, a: f64, b: f64) -> Option<f64> {
        match self.family {
            KernelFamily::SquaredExponential { length_scale } => {
                let d2 = (a - b) * (a - b);
                let l = length_scale;
                Some((-d2 / (2.0 * l * l)).exp() * d2 / (l * l * l))
            }
            KernelFamily::Ar1 { rho } => {
                let h = lag(a, b);
                Some(if h == 0 {
                    0.0
                } else {
                    h as f64 * rho.powi(h - 1)
                })
            }
            _ => None,
        }
    }
}

fn lag(a: f64, b: f64) -> i32 {
    (a - b).abs().round() as i32
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Flat serialized form: family name, hyperparameter list, jitter, and the
/// two components of a sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    #[serde(default)]
    pub hyper: Vec<f64>,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<KernelConfig>,
}

impl TryFrom<KernelConfig> for KernelSpec {
    type Error = Error;

    fn try_from(c: KernelConfig) -> Result<Self> {
        let one = |name: &str| -> Result<f64> {
            match c.hyper.as_slice() {
                [v] => Ok(*v),
                _ => Err(Error::Config(format!(
                    "kernel `{name}` takes exactly one hyperparameter"
                ))),
            }
        };
        let family = match c.family.as_str() {
            "squared_exponential" | "se" => KernelFamily::SquaredExponential {
                length_scale: one("squared_exponential")?,
            },
            "ar1" => KernelFamily::Ar1 { rho: one("ar1")? },
            "brownian_motion" | "brownian" => KernelFamily::BrownianMotion {
                origin: c.hyper.first().copied().unwrap_or(0.0),
            },
            "sum" => {
                let [a, b]: [KernelConfig; 2] = c.components.clone().try_into().map_err(|_| {
                    Error::Config("kernel `sum` needs exactly two components".into())
                })?;
                KernelFamily::Sum(Box::new(a.try_into()?), Box::new(b.try_into()?))
            }
            other => return Err(Error::Config(format!("unknown kernel family `{other}`"))),
        };
        let spec = KernelSpec {
            family,
            jitter: c.jitter,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for KernelConfig {
    fn from(k: KernelSpec) -> Self {
        let family = k.family_name().to_string();
        let (hyper, components) = match k.family {
            KernelFamily::SquaredExponential { length_scale } => (vec![length_scale], vec![]),
            KernelFamily::Ar1 { rho } => (vec![rho], vec![]),
            KernelFamily::BrownianMotion { origin } => (vec![origin], vec![]),
            KernelFamily::Sum(a, b) => (vec![], vec![(*a).into(), (*b).into()]),
        };
        KernelConfig {
            family,
            hyper,
            jitter: k.jitter,
            components,
        }
    }
}

/// `K[i][j] = k(a_i, b_j)`, without jitter.
pub fn realize(spec: &KernelSpec, grid_a: &[f64], grid_b: &[f64]) -> Result<DMatrix<f64>> {
    if grid_a.is_empty() || grid_b.is_empty() {
        return Err(Error::Dimension("kernel realized on an empty grid".into()));
    }
    spec.validate()?;
    Ok(DMatrix::from_fn(grid_a.len(), grid_b.len(), |i, j| {
        spec.value(grid_a[i], grid_b[j])
    }))
}

/// Elementwise `∂V/∂θ` on a grid.
pub fn d_realize(spec: &KernelSpec, grid: &[f64]) -> Result<DMatrix<f64>> {
    if grid.is_empty() {
        return Err(Error::Dimension("kernel realized on an empty grid".into()));
    }
    spec.validate()?;
    if spec.hyper().is_none() {
        return Err(Error::UnsupportedFamily {
            op: "d_realize",
            family: spec.family_name().into(),
        });
    }
    Ok(DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
        spec.d_value(grid[i], grid[j])
            .expect("family has a hyperparameter")
    }))
}

/// `scale · (K(grid, grid) + jitter·I)`.
pub fn cov_matrix(spec: &KernelSpec, grid: &[f64], scale: f64) -> Result<CovMatrix> {
    let mut k = realize(spec, grid, grid)?;
    for i in 0..k.nrows() {
        k[(i, i)] += spec.jitter;
    }
    Ok(CovMatrix::new(k * scale))
}

/// Cholesky factor together with the diagonal inflation that was needed.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `xᵀ A⁻¹ x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        self.solve_lower_vec(x).norm_squared()
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }
}

/// Cholesky with the jitter ladder: tries zero inflation first, then each rung
/// of [`JITTER_LADDER`] relative to the mean diagonal.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Factor> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not square",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("non-finite covariance entry".into()));
    }
    let mean_diag = if n == 0 {
        1.0
    } else {
        m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64
    };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for &rung in JITTER_LADDER.iter() {
        let jitter = rung * scale;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            return Ok(Factor { chol, jitter });
        }
    }
    Err(Error::Conditioning(format!(
        "Cholesky failed on a {n}x{n} matrix after jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
    )))
}

/// Symmetric covariance matrix with a lazily computed Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    factor: OnceLock<std::result::Result<Factor, String>>,
}

impl CovMatrix {
    /// Symmetrizes `(A + Aᵀ)/2`.
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        CovMatrix {
            matrix: sym,
            factor: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CovMatrix::new(DMatrix::identity(n, n))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn factor(&self) -> Result<&Factor> {
        self.factor
            .get_or_init(|| cholesky_with_jitter(&self.matrix).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Conditioning(e.clone()))
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
}

impl PartialEq for CovMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

/// Trace terms of `U = V⁻¹ ∂V/∂θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceTerms {
    pub tr_u2: f64,
    pub tr_u: f64,
    pub n: usize,
}

impl TraceTerms {
    /// `tr(U²) - tr(U)²/n`.
    pub fn centered(&self) -> f64 {
        self.tr_u2 - self.tr_u * self.tr_u / self.n as f64
    }
}

/// `tr(U²)`, `tr(U)` and `n` via Cholesky solves: with `V = LLᵀ`,
/// `A = L⁻¹ (∂V/∂θ) L⁻ᵀ` is similar to `U`.
pub fn whitening_trace_terms(spec: &KernelSpec, grid: &[f64]) -> Result<TraceTerms> {
    let dv = d_realize(spec, grid)?;
    let v = cov_matrix(spec, grid, 1.0)?;
    let f = v.factor()?;
    let x = f.solve_lower(&dv);
    let a = f.solve_lower(&x.transpose());
    let n = grid.len();
    let tr_u = a.trace();
    let mut tr_u2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr_u2 += a[(i, j)] * a[(j, i)];
        }
    }
    Ok(TraceTerms { tr_u2, tr_u, n })
}

pub fn ticks_f64(ticks: &[i64]) -> Vec<f64> {
    ticks.iter().map(|&t| t as f64).collect()
}
