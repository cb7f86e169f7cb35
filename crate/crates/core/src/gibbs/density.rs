use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use super::{LatentState, Sampler};
use crate::baselines::BiasMode;
use crate::error::Result;
use crate::linalg;
use crate::stick_breaking::log_likelihood_vector;

impl Sampler<'_> {
    /// `ln p(r, v, m, z, s, mu, Sigma | c)` up to the flat cut-point term,
    /// with the group proportions integrated out. For the continuous
    /// variants `v` is the observed rating itself and the ordinal term is
    /// absent.
    pub fn joint_log_density(&self, state: &LatentState) -> Result<f64> {
        let data = self.data;
        let b_chol = linalg::cholesky(&self.hp.response_cov, "response covariance")?;
        let mut total = 0.0;
        for (obs, v) in data.observations().iter().zip(&state.v) {
            let mean = &state.z[obs.item] + &state.m[state.s[obs.user]];
            total += linalg::mvn_log_density(v, &mean, &b_chol);
            if self.kind.ordinal_link {
                total += log_likelihood_vector(&obs.ratings, v.as_slice(), &state.c);
            }
        }

        let sigma_chol = linalg::cholesky(&state.sigma, "intrinsic covariance")?;
        for z in &state.z {
            total += linalg::mvn_log_density(z, &state.mu, &sigma_chol);
        }
        total += self.niw_prior().log_density(&state.mu, &state.sigma)?;

        if self.kind.bias_mode != BiasMode::None {
            let lambda_chol = linalg::cholesky(&self.hp.lambda, "bias prior covariance")?;
            let zero = DVector::zeros(data.num_aspects());
            for m in &state.m {
                total += linalg::mvn_log_density(m, &zero, &lambda_chol);
            }
        }
        if self.kind.bias_mode == BiasMode::Group {
            let alpha_sum: f64 = self.hp.alpha.iter().sum();
            total += ln_gamma(alpha_sum) - ln_gamma(data.num_users() as f64 + alpha_sum);
            for (&n, &a) in state.group_counts.iter().zip(&self.hp.alpha) {
                total += ln_gamma(n as f64 + a) - ln_gamma(a);
            }
        }
        Ok(total)
    }
}
