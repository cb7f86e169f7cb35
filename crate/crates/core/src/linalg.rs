//! Small dense linear-algebra and Gaussian helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return false;
            }
        }
    }
    Cholesky::new(m.clone()).is_some()
}

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite(what))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Draws from `N(mean, L L^T)` given the lower Cholesky factor `L`.
pub fn sample_mvn_chol<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol_lower: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    mean + chol_lower * standard_normal_vector(mean.len(), rng)
}

/// Draws from `N(mean, sd^2)` truncated to `(lo, hi)` by inverting the
/// CDF, working in whichever tail keeps the probabilities representable.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std = Normal::standard();
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    // Reflect so the interval does not lie entirely in the upper tail.
    let flip = a > 0.0;
    let (a, b) = if flip { (-b, -a) } else { (a, b) };
    let (pa, pb) = (std.cdf(a), std.cdf(b));
    let x = if pb - pa > 1e-300 {
        let u: f64 = rng.random_range(0.0..1.0);
        std.inverse_cdf(pa + u * (pb - pa)).clamp(a, b)
    } else {
        // Both ends deep in the lower tail: the mass piles up at `b`.
        b
    };
    let x = if flip { -x } else { x };
    mean + sd * x
}

/// Draws from the Gaussian with precision `P` and information vector `h`,
/// i.e. `N(P^{-1} h, P^{-1})`.
pub fn sample_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    info: &DVector<f64>,
    what: &'static str,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(precision, what)?;
    let mean = chol.solve(info);
    let eps = standard_normal_vector(info.len(), rng);
    // P = L L^T, so L^{-T} eps has covariance P^{-1}.
    let offset = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("Cholesky factor has a positive diagonal");
    Ok(mean + offset)
}

/// Mean and covariance of the Gaussian in canonical form.
pub fn canonical_moments(
    precision: &DMatrix<f64>,
    info: &DVector<f64>,
    what: &'static str,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = cholesky(precision, what)?;
    Ok((chol.solve(info), symmetrize(&chol.inverse())))
}

/// Log density of `N(mean, cov)` at `x`, with `cov` given by its Cholesky
/// factorization.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x - mean;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&d)
        .expect("Cholesky factor has a positive diagonal");
    let log_det: f64 = l.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (y.norm_squared() + log_det + d.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Wishart draw `W ~ W(nu, scale)` via the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(
    nu: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    let l = cholesky(scale, "Wishart scale")?.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64)
            .map_err(|_| Error::InvalidHyperparameters(format!("Wishart dof {nu} too small")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    Ok(symmetrize(&(&la * la.transpose())))
}

/// Inverse-Wishart draw `Sigma ~ IW(nu, psi)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    nu: f64,
    psi: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let psi_inv = spd_inverse(psi, "inverse-Wishart scale")?;
    let w = sample_wishart(nu, &psi_inv, rng)?;
    spd_inverse(&w, "Wishart draw")
}

/// Normal-inverse-Wishart parameters `(mu, kappa, nu, psi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Niw {
    pub mu: DVector<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub psi: DMatrix<f64>,
}

impl Niw {
    /// Conjugate update given Gaussian observations.
    pub fn posterior(&self, data: &[DVector<f64>]) -> Niw {
        let n = data.len();
        if n == 0 {
            return self.clone();
        }
        let dim = self.mu.len();
        let nf = n as f64;
        let mean = data.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / nf;
        let scatter = data.iter().fold(DMatrix::zeros(dim, dim), |acc, x| {
            let d = x - &mean;
            acc + &d * d.transpose()
        });
        let kappa = self.kappa + nf;
        let nu = self.nu + nf;
        let mu = (&self.mu * self.kappa + &mean * nf) / kappa;
        let shift = &mean - &self.mu;
        let psi = &self.psi + scatter + (&shift * shift.transpose()) * (self.kappa * nf / kappa);
        Niw {
            mu,
            kappa,
            nu,
            psi: symmetrize(&psi),
        }
    }

    /// Draws `Sigma ~ IW(nu, psi)` then `mu ~ N(mu, Sigma / kappa)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let sigma = sample_inverse_wishart(self.nu, &self.psi, rng)?;
        let l = cholesky(&(&sigma / self.kappa), "NIW mean covariance")?.l();
        let mu = sample_mvn_chol(&self.mu, &l, rng);
        Ok((mu, sigma))
    }

    /// Log density of `(mu, sigma)` under this NIW, including normalizers.
    pub fn log_density(&self, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
        let p = self.mu.len() as f64;
        let chol_sigma = cholesky(sigma, "NIW covariance")?;
        let chol_mean = cholesky(&(sigma / self.kappa), "NIW mean covariance")?;
        let log_det_sigma: f64 = chol_sigma.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let log_det_psi: f64 = cholesky(&self.psi, "NIW scale")?
            .l()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
            * 2.0;
        let trace = (&self.psi * chol_sigma.inverse()).trace();
        let log_mv_gamma = p * (p - 1.0) / 4.0 * std::f64::consts::PI.ln()
            + (0..self.mu.len())
                .map(|j| statrs::function::gamma::ln_gamma((self.nu - j as f64) / 2.0))
                .sum::<f64>();
        let log_iw = 0.5 * self.nu * log_det_psi
            - 0.5 * self.nu * p * std::f64::consts::LN_2
            - log_mv_gamma
            - 0.5 * (self.nu + p + 1.0) * log_det_sigma
            - 0.5 * trace;
        Ok(log_iw + mvn_log_density(mu, &self.mu, &chol_mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_draw_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = DVector::from_vec(vec![1.0, -1.0]);
        let (mean, cov) = canonical_moments(&p, &h, "test").unwrap();
        let n = 200_000;
        let mut sum = DVector::zeros(2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_canonical(&p, &h, "test", &mut rng).unwrap();
            sum += &x;
            sq += &x * x.transpose();
        }
        let m = sum / n as f64;
        let c = sq / n as f64 - &m * m.transpose();
        assert!((m - mean).amax() < 0.01);
        assert!((c - cov).amax() < 0.01);
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let nu = 8.0;
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(nu, &psi, &mut rng).unwrap();
        }
        let expect = &psi / (nu - 2.0 - 1.0);
        assert!(((acc / n as f64) - expect).amax() < 0.01);
    }

    #[test]
    fn mvn_density_matches_univariate() {
        let chol = cholesky(&DMatrix::from_element(1, 1, 4.0), "t").unwrap();
        let x = DVector::from_element(1, 1.0);
        let mu = DVector::from_element(1, 0.0);
        let expect = -0.5 * (1.0 / 4.0) - 0.5 * (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((mvn_log_density(&x, &mu, &chol) - expect).abs() < 1e-12);
    }

    #[test]
    fn spd_detection() {
        assert!(is_spd(&DMatrix::identity(3, 3)));
        assert!(!is_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])));
        assert!(!is_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])));
    }
}
