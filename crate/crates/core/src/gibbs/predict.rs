use nalgebra::DVector;

use super::{PosteriorSamples, Snapshot};
use crate::linalg;
use crate::rng::{substream, Phase};
use crate::stick_breaking::{expected_level, log_likelihood_vector};

/// Policy for users or items absent from training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColdStart {
    /// Unknown items take the sampled population mean `mu`; unknown users
    /// take the most populated group of each sample.
    #[default]
    Marginal,
    /// Unknown entities are an error.
    Strict,
}

/// Per-aspect expected ratings for one user-item pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub expected: Vec<f64>,
}

fn stream_key(user: Option<usize>, item: Option<usize>) -> u64 {
    let u = user.map_or(0, |u| u as u64 + 1);
    let i = item.map_or(0, |i| i as u64 + 1);
    (u << 32) ^ i
}

impl PosteriorSamples {
    pub fn num_aspects(&self) -> usize {
        self.hyperparameters.num_aspects()
    }

    /// `z_i + m_{s_j}` for one snapshot; `None` marks a cold entity.
    pub fn response_mean(
        &self,
        snap: &Snapshot,
        user: Option<usize>,
        item: Option<usize>,
    ) -> DVector<f64> {
        let z = match item {
            Some(i) if i < snap.z.len() => &snap.z[i],
            _ => &snap.mu,
        };
        let group = match user {
            Some(j) if j < snap.s.len() => snap.s[j],
            _ => {
                let counts = snap.group_counts();
                (0..counts.len()).max_by_key(|&g| (counts[g], usize::MAX - g)).unwrap_or(0)
            }
        };
        z + &snap.m[group]
    }

    /// Expected per-aspect rating, averaged over retained samples.
    ///
    /// Ordinal variants integrate the latent response against
    /// `N(z + m, B)` with `predict_draws` Monte-Carlo draws per sample (plug
    /// in the mean when zero) and map through the stick-breaking levels.
    /// Continuous variants return the unclipped mean response.
    pub fn predict(&self, user: Option<usize>, item: Option<usize>) -> Prediction {
        let a = self.num_aspects();
        let mut acc = vec![0.0; a];
        if !self.kind.ordinal_link {
            for snap in &self.states {
                let mean = self.response_mean(snap, user, item);
                for (x, m) in acc.iter_mut().zip(mean.iter()) {
                    *x += m;
                }
            }
        } else {
            let b_lower = linalg::cholesky(&self.hyperparameters.response_cov, "response covariance")
                .expect("validated at fit time")
                .l();
            let key = stream_key(user, item);
            for (t, snap) in self.states.iter().enumerate() {
                let mean = self.response_mean(snap, user, item);
                let per_sample = self.sample_expected(snap, &mean, &b_lower, t as u64, key);
                for (x, e) in acc.iter_mut().zip(per_sample) {
                    *x += e;
                }
            }
        }
        let n = self.states.len() as f64;
        Prediction {
            expected: acc.into_iter().map(|x| x / n).collect(),
        }
    }

    fn sample_expected(
        &self,
        snap: &Snapshot,
        mean: &DVector<f64>,
        b_lower: &nalgebra::DMatrix<f64>,
        t: u64,
        key: u64,
    ) -> Vec<f64> {
        if self.predict_draws == 0 {
            return mean.iter().map(|&m| expected_level(m, &snap.c)).collect();
        }
        let mut rng = substream(self.seed, t, Phase::Predict, key);
        let mut acc = vec![0.0; mean.len()];
        for _ in 0..self.predict_draws {
            let v = linalg::sample_mvn_chol(mean, b_lower, &mut rng);
            for (x, &va) in acc.iter_mut().zip(v.iter()) {
                *x += expected_level(va, &snap.c);
            }
        }
        acc.into_iter()
            .map(|x| x / self.predict_draws as f64)
            .collect()
    }

    /// Log of the posterior-averaged probability (density for continuous
    /// variants) of an observed rating vector.
    pub fn observation_log_likelihood(
        &self,
        user: Option<usize>,
        item: Option<usize>,
        ratings: &[u8],
    ) -> f64 {
        let b_chol = linalg::cholesky(&self.hyperparameters.response_cov, "response covariance")
            .expect("validated at fit time");
        let mut terms = Vec::new();
        if !self.kind.ordinal_link {
            let r = DVector::from_iterator(ratings.len(), ratings.iter().map(|&x| x as f64));
            for snap in &self.states {
                let mean = self.response_mean(snap, user, item);
                terms.push(linalg::mvn_log_density(&r, &mean, &b_chol));
            }
        } else {
            let b_lower = b_chol.l();
            let key = stream_key(user, item);
            for (t, snap) in self.states.iter().enumerate() {
                let mean = self.response_mean(snap, user, item);
                if self.predict_draws == 0 {
                    terms.push(log_likelihood_vector(ratings, mean.as_slice(), &snap.c));
                    continue;
                }
                // Offset the stream so likelihood draws are independent of
                // the prediction draws for the same pair.
                let mut rng = substream(self.seed ^ 0x5bd1_e995, t as u64, Phase::Predict, key);
                for _ in 0..self.predict_draws {
                    let v = linalg::sample_mvn_chol(&mean, &b_lower, &mut rng);
                    terms.push(log_likelihood_vector(ratings, v.as_slice(), &snap.c));
                }
            }
        }
        log_mean_exp(&terms)
    }
}

pub(crate) fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + (s / xs.len() as f64).ln()
}
