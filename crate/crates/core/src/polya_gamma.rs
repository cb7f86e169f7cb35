//! Pólya-Gamma variates `PG(b, c)` for integer shape `b`.
//!
//! `PG(1, c)` is drawn exactly with Devroye's alternating-series rejection
//! sampler on a proposal that mixes a truncated inverse-Gaussian (left of the
//! truncation point) and a shifted exponential (right of it). Integer shapes
//! are sums of independent `PG(1, c)` draws.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::erfc;

/// Switch point between the two series representations of the Jacobi density.
const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;

/// Shape and tilt of a Pólya-Gamma distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgParams {
    pub b: u32,
    pub c: f64,
}

impl PgParams {
    pub fn new(b: u32, c: f64) -> Self {
        Self { b, c }
    }

    /// `E[PG(b, c)] = b tanh(c / 2) / (2 c)`, with limit `b / 4` at `c = 0`.
    pub fn mean(&self) -> f64 {
        let c = self.c.abs();
        if c < 1e-8 {
            self.b as f64 / 4.0
        } else {
            self.b as f64 * (0.5 * c).tanh() / (2.0 * c)
        }
    }
}

/// Draws from `PG(b, c)`. `b = 0` is the point mass at zero.
pub fn sample_pg<R: Rng + ?Sized>(params: PgParams, rng: &mut R) -> f64 {
    (0..params.b).map(|_| sample_pg1(params.c, rng)).sum()
}

/// Exact draw from `PG(1, c)`.
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    // Work with J*(1, z) where PG(1, c) = J*(1, |c| / 2) / 4.
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = exponential_mass(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            TRUNC + rng.sample::<f64, _>(Exp1) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0usize;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
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

/// n-th term of the piecewise alternating series for the J*(1) density.
fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * (FRAC_PI_2.ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Probability of choosing the exponential (right) piece of the proposal.
fn exponential_mass(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse-Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if TRUNC_RECIP > z {
        // Mean beyond the truncation point: propose from the z = 0 case
        // (a truncated Levy) and accept with exp(-z^2 x / 2).
        loop {
            let e = loop {
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                if e1 * e1 <= 2.0 * e2 / t {
                    break e1;
                }
            };
            let y = 1.0 + e * t;
            let x = t / (y * y);
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = rng.sample(StandardNormal);
            let y = n * n;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            let mut x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// Both sides of the Pólya-Gamma integral identity
/// `e^{a psi} / (1 + e^psi)^b = 2^{-b} e^{kappa psi} E[exp(-omega psi^2 / 2)]`
/// with `omega ~ PG(b, 0)` and `kappa = a - b / 2`.
#[derive(Clone, Copy, Debug)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Monte-Carlo standard error of `rhs`.
    pub rhs_std_error: f64,
}

/// Evaluates the identity with `num_mc` draws of `PG(b, 0)`.
pub fn pg_identity_check<R: Rng + ?Sized>(
    a: f64,
    b: u32,
    psi: f64,
    num_mc: usize,
    rng: &mut R,
) -> IdentityCheck {
    assert!(b > 0, "identity requires b > 0");
    assert!(num_mc > 1, "need at least two Monte-Carlo draws");
    let bf = b as f64;
    let lhs = (a * psi - bf * softplus(psi)).exp();
    let kappa = a - bf / 2.0;
    let prefactor = (-bf * std::f64::consts::LN_2 + kappa * psi).exp();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..num_mc {
        let w = sample_pg(PgParams::new(b, 0.0), rng);
        let e = (-0.5 * w * psi * psi).exp();
        sum += e;
        sum_sq += e * e;
    }
    let n = num_mc as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    IdentityCheck {
        lhs,
        rhs: prefactor * mean,
        rhs_std_error: prefactor * (var / n).sqrt(),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
