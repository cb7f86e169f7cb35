//! Forward simulation of rating datasets from the generative model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::config::Hyperparameters;
use crate::data::{Observation, RatingsDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, Niw};
use crate::rng::{sample_categorical, substream, Phase, SamplerRng};
use crate::stick_breaking::{category_probabilities, CutPoints};

/// How observed (user, item) pairs are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Activity {
    /// Every pair observed independently with probability `density`.
    Uniform,
    /// User `j` (0-based) has weight `(j + 1)^-exponent`; pair probabilities
    /// are scaled so the expected number of observations matches `density`.
    PowerLaw { exponent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_levels: usize,
    pub density: f64,
    pub cutpoints: Vec<f64>,
    pub activity: Activity,
    /// Redraw group biases until every pair is at least this far apart.
    pub min_bias_separation: f64,
    /// Drop random ratings of items above this count.
    pub max_ratings_per_item: Option<usize>,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(num_users: usize, num_items: usize, num_levels: usize, density: f64) -> Self {
        Self {
            num_users,
            num_items,
            num_levels,
            density,
            cutpoints: crate::config::evenly_spaced(num_levels - 1, -5.0, 7.0),
            activity: Activity::Uniform,
            min_bias_separation: 0.0,
            max_ratings_per_item: None,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if self.num_users == 0 || self.num_items == 0 {
            return Err(Error::InvalidConfig("need at least one user and one item".into()));
        }
        if self.num_levels < 2 || self.num_levels > u8::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "number of levels must lie in 2..=255, got {}",
                self.num_levels
            )));
        }
        if self.cutpoints.len() + 1 != self.num_levels {
            return Err(Error::InvalidConfig(format!(
                "{} cut-points given for {} levels",
                self.cutpoints.len(),
                self.num_levels
            )));
        }
        Ok(())
    }
}

/// Parameters drawn from the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorDraw {
    pub theta: Vec<f64>,
    pub m: Vec<DVector<f64>>,
    pub s: Vec<usize>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub z: Vec<DVector<f64>>,
}

/// Everything behind a simulated dataset, indexed like the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: Vec<f64>,
    #[serde(with = "crate::gibbs::vec_of_vectors")]
    pub m: Vec<DVector<f64>>,
    pub s: Vec<usize>,
    #[serde(with = "crate::config::vector_list")]
    pub mu: DVector<f64>,
    #[serde(with = "crate::config::matrix_rows")]
    pub sigma: DMatrix<f64>,
    #[serde(with = "crate::gibbs::vec_of_vectors")]
    pub z: Vec<DVector<f64>>,
    pub c: CutPoints,
    /// Latent response of every observation, in dataset order.
    #[serde(with = "crate::gibbs::vec_of_vectors")]
    pub v: Vec<DVector<f64>>,
}

impl GroundTruth {
    /// Bias vector carried by each user.
    pub fn user_bias(&self) -> Vec<DVector<f64>> {
        self.s.iter().map(|&g| self.m[g].clone()).collect()
    }
}

/// `theta ~ Dir(alpha)` via normalized gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.into_iter().map(|x| x / total).collect()
    } else {
        // All draws underflowed (tiny concentrations): put the mass on one
        // uniformly chosen component.
        let mut theta = vec![0.0; alpha.len()];
        theta[rng.random_range(0..alpha.len())] = 1.0;
        theta
    }
}

/// Draws `theta, m, s, (mu, Sigma), z` from the prior. Group biases are
/// redrawn until all pairs are at least `min_separation` apart.
pub fn sample_prior<R: Rng + ?Sized>(
    hp: &Hyperparameters,
    num_users: usize,
    num_items: usize,
    min_separation: f64,
    rng: &mut R,
) -> Result<PriorDraw> {
    let a = hp.num_aspects();
    let theta = sample_dirichlet(&hp.alpha, rng);
    let lambda_lower = linalg::cholesky(&hp.lambda, "bias prior covariance")?.l();
    let zero = DVector::zeros(a);
    let mut m = Vec::new();
    for attempt in 0.. {
        if attempt == 10_000 {
            return Err(Error::InvalidConfig(format!(
                "could not draw group biases {min_separation} apart"
            )));
        }
        m = (0..hp.num_groups)
            .map(|_| linalg::sample_mvn_chol(&zero, &lambda_lower, rng))
            .collect();
        let separated = (0..m.len())
            .all(|g| (g + 1..m.len()).all(|h| (&m[g] - &m[h]).norm() >= min_separation));
        if separated {
            break;
        }
    }
    let s = (0..num_users).map(|_| sample_categorical(&theta, rng)).collect();
    let niw = Niw {
        mu: hp.niw_mu0.clone(),
        kappa: hp.niw_kappa0,
        nu: hp.niw_nu0,
        psi: hp.niw_psi0.clone(),
    };
    let (mu, sigma) = niw.sample(rng)?;
    let sigma_lower = linalg::cholesky(&sigma, "intrinsic covariance")?.l();
    let z = (0..num_items)
        .map(|_| linalg::sample_mvn_chol(&mu, &sigma_lower, rng))
        .collect();
    Ok(PriorDraw {
        theta,
        m,
        s,
        mu,
        sigma,
        z,
    })
}

/// Observed `(user, item)` pairs in user-major order. Every user and item
/// is guaranteed at least one observation.
pub fn sample_pattern<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> Vec<(usize, usize)> {
    let (nu, ni) = (cfg.num_users, cfg.num_items);
    let weights: Vec<f64> = match cfg.activity {
        Activity::Uniform => vec![1.0; nu],
        Activity::PowerLaw { exponent } => (0..nu).map(|j| ((j + 1) as f64).powf(-exponent)).collect(),
    };
    let mean_w = weights.iter().sum::<f64>() / nu as f64;
    let mut rated = vec![vec![false; ni]; nu];
    for (j, w) in weights.iter().enumerate() {
        let p = (cfg.density * w / mean_w).min(1.0);
        for slot in rated[j].iter_mut() {
            *slot = rng.random::<f64>() < p;
        }
    }
    if let Some(cap) = cfg.max_ratings_per_item {
        #[allow(clippy::needless_range_loop)]
        for i in 0..ni {
            let mut raters: Vec<usize> = (0..nu).filter(|&j| rated[j][i]).collect();
            if raters.len() > cap {
                raters.shuffle(rng);
                for &j in &raters[cap..] {
                    rated[j][i] = false;
                }
            }
        }
    }
    let mut counts: Vec<usize> = (0..ni).map(|i| (0..nu).filter(|&j| rated[j][i]).count()).collect();
    let cap = cfg.max_ratings_per_item.unwrap_or(usize::MAX);
    for row in rated.iter_mut() {
        if !row.iter().any(|&x| x) {
            let open: Vec<usize> = (0..ni).filter(|&i| counts[i] < cap).collect();
            let i = if open.is_empty() {
                rng.random_range(0..ni)
            } else {
                open[rng.random_range(0..open.len())]
            };
            row[i] = true;
            counts[i] += 1;
        }
    }
    #[allow(clippy::needless_range_loop)]
    for i in 0..ni {
        if !(0..nu).any(|j| rated[j][i]) {
            rated[rng.random_range(0..nu)][i] = true;
        }
    }
    let mut pairs = Vec::new();
    for (j, row) in rated.iter().enumerate() {
        for (i, &x) in row.iter().enumerate() {
            if x {
                pairs.push((j, i));
            }
        }
    }
    pairs
}

/// One ordinal rating per entry of `v`.
pub fn sample_ratings<R: Rng + ?Sized>(v: &DVector<f64>, c: &CutPoints, rng: &mut R) -> Vec<u8> {
    v.iter()
        .map(|&va| sample_categorical(&category_probabilities(va, c), rng) as u8 + 1)
        .collect()
}

/// `v ~ N(z_i + m_{s_j}, B)` and ordinal ratings for each pair. Each pair
/// draws from its own substream.
pub fn sample_observations(
    prior: &PriorDraw,
    pairs: &[(usize, usize)],
    b_lower: &DMatrix<f64>,
    c: &CutPoints,
    seed: u64,
    sweep: u64,
) -> (Vec<DVector<f64>>, Vec<Vec<u8>>) {
    pairs
        .iter()
        .enumerate()
        .map(|(n, &(j, i))| {
            let mut rng: SamplerRng = substream(seed, sweep, Phase::Simulate, 1 + n as u64);
            let mean = &prior.z[i] + &prior.m[prior.s[j]];
            let v = linalg::sample_mvn_chol(&mean, b_lower, &mut rng);
            let r = sample_ratings(&v, c, &mut rng);
            (v, r)
        })
        .unzip()
}

/// Simulates a dataset and its ground truth. Users are named `u<j>` and
/// items `i<i>`, with dense indices equal to `j` and `i`.
pub fn generate(hp: &Hyperparameters, cfg: &SimulationConfig) -> Result<(RatingsDataset, GroundTruth)> {
    cfg.validate()?;
    hp.validate(hp.num_aspects())?;
    let c = CutPoints::new(cfg.cutpoints.clone())?;
    let mut rng = substream(cfg.seed, 0, Phase::Simulate, 0);
    let prior = sample_prior(hp, cfg.num_users, cfg.num_items, cfg.min_bias_separation, &mut rng)?;
    let pairs = sample_pattern(cfg, &mut rng);
    let b_lower = linalg::cholesky(&hp.response_cov, "response covariance")?.l();
    let (v, ratings) = sample_observations(&prior, &pairs, &b_lower, &c, cfg.seed, 0);
    let observations = pairs
        .iter()
        .zip(ratings)
        .map(|(&(user, item), ratings)| Observation { user, item, ratings })
        .collect();
    let a = hp.num_aspects();
    let data = RatingsDataset::from_parts(
        cfg.num_levels,
        (1..=a).map(|x| format!("aspect{x}")).collect(),
        (0..cfg.num_users).map(|j| format!("u{j}")).collect(),
        (0..cfg.num_items).map(|i| format!("i{i}")).collect(),
        observations,
    );
    let truth = GroundTruth {
        theta: prior.theta,
        m: prior.m,
        s: prior.s,
        mu: prior.mu,
        sigma: prior.sigma,
        z: prior.z,
        c,
        v,
    };
    Ok((data, truth))
}
