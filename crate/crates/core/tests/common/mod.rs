//! Fixtures and reference computations shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use aspect_bias::synthetic::{self, GroundTruth, SimulationConfig};
use aspect_bias::{Hyperparameters, PosteriorSamples, RatingsDataset, RunConfig};
use nalgebra::{DMatrix, DVector};

/// True cut-points of the synthetic fixtures: unit gaps give every level
/// a fair share of ratings.
pub const TRUE_CUTPOINTS: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];

pub struct Fixture {
    pub data: RatingsDataset,
    pub truth: GroundTruth,
    pub hp: Hyperparameters,
}

/// `J = 200, I = 50, A = 4, K = 5, G = 3` with group biases at least 2 apart.
pub fn recovery_fixture(seed: u64) -> Fixture {
    let hp = Hyperparameters::with_groups(4, 3);
    let mut cfg = SimulationConfig::new(200, 50, 5, 0.2);
    cfg.cutpoints = TRUE_CUTPOINTS.to_vec();
    cfg.min_bias_separation = 2.0;
    cfg.seed = seed;
    let (data, truth) = synthetic::generate(&hp, &cfg).expect("fixture simulates");
    Fixture { data, truth, hp }
}

/// Few raters per item, balanced groups and biases large against the
/// logistic noise of the ordinal link. Latent scales are widened together
/// (cut-point gaps of 5) so strong biases shift ratings without pinning
/// them to the end levels.
pub fn sparse_fixture(seed: u64) -> Fixture {
    let mut hp = Hyperparameters::with_groups(4, 3);
    hp.alpha = vec![20.0; 3];
    hp.lambda *= 36.0;
    hp.niw_psi0 *= 16.0;
    let mut cfg = SimulationConfig::new(1000, 600, 5, 0.01);
    cfg.cutpoints = TRUE_CUTPOINTS.iter().map(|c| 5.0 * c).collect();
    cfg.min_bias_separation = 8.0;
    cfg.max_ratings_per_item = Some(SPARSE_MAX_RATINGS);
    cfg.seed = seed;
    let (data, truth) = synthetic::generate(&hp, &cfg).expect("fixture simulates");
    Fixture { data, truth, hp }
}

pub const SPARSE_MAX_RATINGS: usize = 4;

/// 300 burn-in sweeps and 200 retained samples.
pub fn run_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default_for(5);
    cfg.seed = seed;
    cfg.parallel_blocks = true;
    cfg
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Recovery scores after matching fitted labels to true labels by the
/// permutation with the highest assignment accuracy.
pub struct Recovery {
    pub accuracy: f64,
    pub bias_pearson: f64,
    pub intrinsic_pearson: f64,
}

pub fn recovery(samples: &PosteriorSamples, truth: &GroundTruth) -> Recovery {
    let groups = samples.modal_groups().unwrap();
    let g = samples.num_groups().max(truth.m.len());
    let mut best = (0.0, Vec::new());
    for perm in permutations(g) {
        let hits = groups
            .iter()
            .zip(&truth.s)
            .filter(|(&fit, &tru)| perm[fit] == tru)
            .count();
        let acc = hits as f64 / groups.len() as f64;
        if acc > best.0 {
            best = (acc, perm);
        }
    }
    let (accuracy, perm) = best;
    // Only `z + m` enters the likelihood, so each aspect's bias is known up
    // to a shift shared by all groups; compare contrasts against the
    // across-group mean.
    let fitted = samples.mean_group_bias().unwrap();
    let matched: Vec<(usize, usize)> = (0..fitted.len())
        .filter(|&fg| perm[fg] < truth.m.len())
        .map(|fg| (fg, perm[fg]))
        .collect();
    let aspects = truth.m[0].len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    #[allow(clippy::needless_range_loop)]
    for a in 0..aspects {
        let n = matched.len() as f64;
        let fit_mean = matched.iter().map(|&(f, _)| fitted[f][a]).sum::<f64>() / n;
        let true_mean = matched.iter().map(|&(_, t)| truth.m[t][a]).sum::<f64>() / n;
        for &(f, t) in &matched {
            x.push(fitted[f][a] - fit_mean);
            y.push(truth.m[t][a] - true_mean);
        }
    }
    let bias_pearson = pearson(&x, &y);
    let z_fit: Vec<f64> = samples.mean_intrinsic().unwrap().iter().flat_map(|z| z.iter().copied().collect::<Vec<_>>()).collect();
    let z_true: Vec<f64> = truth.z.iter().flat_map(|z| z.iter().copied().collect::<Vec<_>>()).collect();
    Recovery {
        accuracy,
        bias_pearson,
        intrinsic_pearson: pearson(&z_fit, &z_true),
    }
}

/// Gaussian posterior of `x ~ N(prior_mean, prior_cov)` after observing
/// each `y ~ N(x, noise)`, by sequential covariance-form updates.
pub fn sequential_gaussian_posterior(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    observations: &[DVector<f64>],
    noise: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = prior_mean.clone();
    let mut cov = prior_cov.clone();
    let eye = DMatrix::identity(mean.len(), mean.len());
    for y in observations {
        let gain = &cov * (&cov + noise).try_inverse().unwrap();
        mean = &mean + &gain * (y - &mean);
        cov = (&eye - &gain) * &cov;
        cov = (&cov + cov.transpose()) * 0.5;
    }
    (mean, cov)
}

/// Stick-breaking level probabilities from first principles:
/// `P(k) = sigma(c_k - v) prod_{k' < k} (1 - sigma(c_k' - v))`.
pub fn level_probabilities(v: f64, c: &[f64]) -> Vec<f64> {
    let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut rest = 1.0;
    let mut out = Vec::new();
    for &ck in c {
        let p = sigma(ck - v);
        out.push(rest * p);
        rest *= 1.0 - p;
    }
    out.push(rest);
    out
}

/// Numerical CDF of an unnormalised 1-D log density on an even grid.
pub struct GridCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridCdf {
    pub fn new(lo: f64, hi: f64, n: usize, log_density: impl Fn(f64) -> f64) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { xs, cdf }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let last = self.xs.len() - 1;
        if x >= self.xs[last] {
            return 1.0;
        }
        let h = self.xs[1] - self.xs[0];
        let i = (((x - self.xs[0]) / h) as usize).min(last - 1);
        let t = (x - self.xs[i]) / h;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF by bisection over the grid.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + t * (self.xs[i] - self.xs[i - 1])
    }
}
