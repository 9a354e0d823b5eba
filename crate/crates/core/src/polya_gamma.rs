//! Exact PG(1, c) sampler (Devroye's alternating-series rejection method).
//!
//! The proposal mixes a truncated exponential (right of `T`) and a truncated
//! inverse Gaussian (left of `T`); the Jacobi-type series decides acceptance.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Switch point between the two series representations.
const TRUNC: f64 = 0.64;
const PI2_8: f64 = PI * PI / 8.0;

/// Draws `ω ~ PG(1, c)`.
pub fn pg_sample<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    // PG(1, c) = J*(1, c/2) / 4.
    0.25 * sample_jstar(0.5 * c.abs(), rng)
}

/// Mean of `PG(1, c)`: `tanh(c/2) / (2c)`, with limit 1/4 at zero.
pub fn pg_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Variance of `PG(1, c)`.
pub fn pg_variance(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        // Series: 1/24 - c²/120 + ...
        1.0 / 24.0 - c * c / 120.0
    } else {
        // (sinh(c) - c) / (4 c³ cosh²(c/2))
        let ch = (0.5 * c).cosh();
        (c.sinh() - c) / (4.0 * c * c * c * ch * ch)
    }
}

fn sample_jstar<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let k = PI2_8 + 0.5 * z * z;
    let p = (0.5 * PI / k) * (-k * TRUNC).exp();
    let q = 2.0 * (-z).exp() * inverse_gaussian_cdf(TRUNC, z);
    loop {
        let u: f64 = rng.random();
        let x = if u < p / (p + q) {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Piecewise coefficient `a_n(x)` of the J*(1) density series.
fn series_coef(n: u32, x: f64) -> f64 {
    let m = n as f64 + 0.5;
    if x > TRUNC {
        PI * m * (-0.5 * m * m * PI * PI * x).exp()
    } else {
        PI * m * (FRAC_2_PI / x).powf(1.5) * (-2.0 * m * m / x).exp()
    }
}

/// CDF at `x` of the inverse Gaussian with mean `1/z` and shape 1.
fn inverse_gaussian_cdf(x: f64, z: f64) -> f64 {
    let b = 1.0 / x.sqrt();
    let a = b * (x * z - 1.0);
    let c = -b * (x * z + 1.0);
    normal_cdf(a) + (2.0 * z + normal_cdf(c).ln()).exp()
}

/// Inverse Gaussian with mean `1/z`, shape 1, truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > TRUNC {
        // Chi-square-based proposal with exponential tilt acceptance.
        loop {
            let (mut e1, mut e2): (f64, f64);
            loop {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / TRUNC {
                    break;
                }
            }
            let d = 1.0 + TRUNC * e1;
            let x = TRUNC / (d * d);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= TRUNC {
                return x;
            }
        }
    }
}

/// Standard normal CDF via `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Left and right sides of the Polya-Gamma integral identity for one
/// Bernoulli outcome: the likelihood `e^{hr}/(1+e^h)` and a Monte Carlo
/// estimate of `½ ∫ exp(−ωh²/2 + (r − ½)h) p(ω) dω` over `draws` PG(1, 0) variates.
pub fn pg_augmented_identity_check<R: Rng + ?Sized>(
    h: f64,
    r: u8,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    let lhs = (h * r as f64 - crate::survival::log1p_exp(h)).exp();
    let kappa = r as f64 - 0.5;
    let mean = (0..draws)
        .map(|_| (-0.5 * pg_sample(0.0, rng) * h * h).exp())
        .sum::<f64>()
        / draws as f64;
    let rhs = 0.5 * (kappa * h).exp() * mean;
    (lhs, rhs)
}
