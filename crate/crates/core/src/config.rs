//! Model hyperparameters and sampler run configuration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Every fixed symbol of the model.
///
/// `lambda` is the prior covariance of the group bias offsets, `response_cov`
/// the covariance of the latent response around `z_i + m_g`. The NIW block
/// is the conjugate prior on the intrinsic-quality mean and covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub num_groups: usize,
    pub alpha: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub lambda: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub response_cov: DMatrix<f64>,
    #[serde(with = "vector_list")]
    pub niw_mu0: DVector<f64>,
    pub niw_kappa0: f64,
    pub niw_nu0: f64,
    #[serde(with = "matrix_rows")]
    pub niw_psi0: DMatrix<f64>,
    /// Standard deviation of the zero-mean Gaussian prior on each cut-point,
    /// used by [`CutpointRule::Augmented`].
    #[serde(default = "default_cutpoint_prior_sd")]
    pub cutpoint_prior_sd: f64,
}

fn default_cutpoint_prior_sd() -> f64 {
    10.0
}

impl Hyperparameters {
    /// Defaults: ten groups, unit Dirichlet concentration, identity bias
    /// covariance, response covariance `0.25 I` and `NIW(0, 1, A + 2, I)`.
    pub fn default_for(num_aspects: usize) -> Self {
        Self::with_groups(num_aspects, 10)
    }

    pub fn with_groups(num_aspects: usize, num_groups: usize) -> Self {
        let eye = DMatrix::identity(num_aspects, num_aspects);
        Self {
            num_groups,
            alpha: vec![1.0; num_groups],
            lambda: eye.clone(),
            response_cov: eye.clone() * 0.25,
            niw_mu0: DVector::zeros(num_aspects),
            niw_kappa0: 1.0,
            niw_nu0: num_aspects as f64 + 2.0,
            niw_psi0: eye,
            cutpoint_prior_sd: default_cutpoint_prior_sd(),
        }
    }

    pub fn num_aspects(&self) -> usize {
        self.niw_mu0.len()
    }

    /// Copy with a different number of groups and a flat concentration
    /// equal to the first current entry.
    pub fn regrouped(&self, num_groups: usize) -> Self {
        let a = self.alpha.first().copied().unwrap_or(1.0);
        Self {
            num_groups,
            alpha: vec![a; num_groups],
            ..self.clone()
        }
    }

    pub fn validate(&self, num_aspects: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperparameters(m));
        if self.num_groups == 0 {
            return bad("num_groups must be at least 1".into());
        }
        if self.alpha.len() != self.num_groups {
            return bad(format!(
                "alpha has {} entries for {} groups",
                self.alpha.len(),
                self.num_groups
            ));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("alpha entries must be positive".into());
        }
        if self.niw_mu0.len() != num_aspects {
            return bad(format!("niw_mu0 has length {}, expected {num_aspects}", self.niw_mu0.len()));
        }
        for (name, m) in [
            ("lambda", &self.lambda),
            ("response_cov", &self.response_cov),
            ("niw_psi0", &self.niw_psi0),
        ] {
            if m.nrows() != num_aspects || m.ncols() != num_aspects {
                return bad(format!("{name} must be {num_aspects}x{num_aspects}"));
            }
            if !linalg::is_spd(m) {
                return bad(format!("{name} is not symmetric positive-definite"));
            }
        }
        if self.cutpoint_prior_sd.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("cutpoint_prior_sd must be positive".into());
        }
        if self.niw_kappa0.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("niw_kappa0 must be positive".into());
        }
        if self.niw_nu0.partial_cmp(&(num_aspects as f64 - 1.0)) != Some(std::cmp::Ordering::Greater) {
            return bad(format!("niw_nu0 must exceed {}", num_aspects as f64 - 1.0));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("hyperparameters always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// How the cut-point update draws `c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutpointRule {
    /// Uniform over the range that keeps every correctly placed latent
    /// response inside the threshold cell of its observed level.
    LemmaConsistent,
    /// Exact Gibbs draw: given fresh Pólya-Gamma auxiliaries for stick `k`,
    /// `c_k` is Gaussian, truncated to keep the cut-points ordered.
    #[default]
    Augmented,
    /// Argmax-based range: both ends offset by `-ln(1 - exp(-(c_k - c_{k-1})))`
    /// and support sets chosen by the current argmax category.
    Literal,
}

/// Sampler run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub burn_in: usize,
    pub num_samples: usize,
    pub thinning: usize,
    pub init_cutpoints: Vec<f64>,
    pub parallel_blocks: bool,
    #[serde(default = "default_true")]
    pub update_cutpoints: bool,
    #[serde(default)]
    pub cutpoint_rule: CutpointRule,
    /// Retain latent responses in every snapshot.
    #[serde(default)]
    pub keep_latent: bool,
    /// Monte-Carlo draws of the latent response per posterior sample when
    /// predicting; zero means plug in the mean response.
    #[serde(default = "default_predict_draws")]
    pub predict_draws: usize,
    /// Follow the centred updates of groups, biases and intrinsic quality
    /// with updates that hold the response noise `v - z - m` fixed.
    #[serde(default = "default_true")]
    pub ancillary_updates: bool,
}

fn default_true() -> bool {
    true
}

fn default_predict_draws() -> usize {
    16
}

/// `n` evenly spaced points over `[lo, hi]`.
pub fn evenly_spaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl RunConfig {
    /// Cut-points evenly spaced over `[-5, 7]`, 300 burn-in sweeps and 200
    /// retained samples.
    pub fn default_for(num_levels: usize) -> Self {
        Self {
            seed: 0,
            burn_in: 300,
            num_samples: 200,
            thinning: 1,
            init_cutpoints: evenly_spaced(num_levels.saturating_sub(1), -5.0, 7.0),
            parallel_blocks: false,
            update_cutpoints: true,
            cutpoint_rule: CutpointRule::Augmented,
            keep_latent: false,
            predict_draws: default_predict_draws(),
            ancillary_updates: true,
        }
    }

    pub fn validate(&self, num_levels: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_samples == 0 {
            return bad("num_samples must be at least 1".into());
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1".into());
        }
        if self.init_cutpoints.len() + 1 != num_levels {
            return bad(format!(
                "{} initial cut-points for {num_levels} levels",
                self.init_cutpoints.len()
            ));
        }
        if self.init_cutpoints.iter().any(|c| !c.is_finite())
            || self.init_cutpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("initial cut-points must be finite and strictly increasing".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, used in run manifests.
    pub fn config_hash(&self, hp: &Hyperparameters) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(serde_json::to_vec(hp).expect("hyperparameters serialize"));
        hex::encode(h.finalize())
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

pub(crate) mod vector_list {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
