//! Sampler self-checks: Pólya-Gamma moments, a joint-distribution
//! (Geweke) test of the Gibbs kernel, and trace summaries.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::config::{CutpointRule, Hyperparameters, RunConfig};
use crate::data::{Observation, RatingsDataset};
use crate::error::{Error, Result};
use crate::gibbs::{LatentState, Sampler};
use crate::linalg;
use crate::polya_gamma::{sample_pg1, PgParams};
use crate::rng::{substream, Phase};
use crate::stats::{batch_means_se, mean, trend_slope, variance};
use crate::stick_breaking::CutPoints;
use crate::synthetic::{sample_observations, sample_prior, sample_ratings, PriorDraw};

/// Sample mean of `PG(1, c)` draws against the exact mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgMomentCheck {
    pub c: f64,
    pub draws: usize,
    pub mean: f64,
    pub std_error: f64,
    pub exact: f64,
    /// `(mean - exact) / std_error`.
    pub z: f64,
}

/// Exact variance of `PG(1, c)`, `1/24` at `c = 0`.
pub fn pg1_variance(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        // Series: 1/24 - c^2/240 + O(c^4).
        return 1.0 / 24.0 - c * c / 240.0;
    }
    (c.sinh() - c) / (4.0 * c.powi(3) * (0.5 * c).cosh().powi(2))
}

pub fn pg_moment_check(c: f64, draws: usize, seed: u64) -> PgMomentCheck {
    let mut rng = substream(seed, 0, Phase::Diagnostics, c.to_bits());
    let xs: Vec<f64> = (0..draws).map(|_| sample_pg1(c, &mut rng)).collect();
    let m = mean(&xs);
    let se = (variance(&xs) / draws as f64).sqrt();
    let exact = PgParams::new(1, c).mean();
    PgMomentCheck {
        c,
        draws,
        mean: m,
        std_error: se,
        exact,
        z: (m - exact) / se,
    }
}

/// Settings of the joint-distribution test. Users rate every item.
/// With `sample_cutpoints` the cut-points are drawn from their prior
/// (sorted independent normals) and updated by the chain; otherwise they
/// stay at `cutpoints`.
#[derive(Clone, Debug)]
pub struct GewekeConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_levels: usize,
    pub cutpoints: Vec<f64>,
    pub sample_cutpoints: bool,
    pub hyperparameters: Hyperparameters,
    pub forward_draws: usize,
    pub chain_sweeps: usize,
    pub num_batches: usize,
    pub ancillary_updates: bool,
    pub seed: u64,
}

impl GewekeConfig {
    /// `J = 4, I = 3, A = 2, K = 3, G = 2`. The inverse-Wishart degrees of
    /// freedom are raised so that fourth moments of `z` exist and the
    /// standard errors of second moments are finite.
    pub fn small(seed: u64) -> Self {
        let mut hyperparameters = Hyperparameters::with_groups(2, 2);
        hyperparameters.niw_nu0 = 8.0;
        hyperparameters.cutpoint_prior_sd = 1.5;
        Self {
            num_users: 4,
            num_items: 3,
            num_levels: 3,
            cutpoints: vec![-1.0, 1.0],
            sample_cutpoints: true,
            hyperparameters,
            forward_draws: 50_000,
            chain_sweeps: 50_000,
            num_batches: 50,
            ancillary_updates: true,
            seed,
        }
    }
}

/// One test function compared between the two simulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeStat {
    pub name: String,
    /// 1 for `E[x]`, 2 for `E[x^2]`.
    pub moment: u8,
    pub forward: f64,
    pub forward_se: f64,
    pub chain: f64,
    pub chain_se: f64,
    /// Difference over its combined standard error.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&GewekeStat> {
        self.stats.iter().filter(|s| s.z.abs() > tolerance).collect()
    }
}

fn push_values(
    out: &mut Vec<f64>,
    z: &[DVector<f64>],
    m: &[DVector<f64>],
    v: &[DVector<f64>],
    c: Option<&CutPoints>,
) {
    for x in z.iter().chain(m).chain(v) {
        out.extend(x.iter().copied());
    }
    if let Some(c) = c {
        out.extend_from_slice(c.as_slice());
    }
}

fn test_function_names(cfg: &GewekeConfig, num_obs: usize) -> Vec<String> {
    let a = cfg.hyperparameters.num_aspects();
    let mut names = Vec::new();
    for (label, count) in [("z", cfg.num_items), ("m", cfg.hyperparameters.num_groups), ("v", num_obs)] {
        for i in 0..count {
            for k in 0..a {
                names.push(format!("{label}[{i},{k}]"));
            }
        }
    }
    if cfg.sample_cutpoints {
        names.extend((1..cfg.num_levels).map(|k| format!("c[{k}]")));
    }
    names
}

struct ForwardDraw {
    prior: PriorDraw,
    c: CutPoints,
    v: Vec<DVector<f64>>,
    ratings: Vec<Vec<u8>>,
}

fn forward_draw(
    cfg: &GewekeConfig,
    pairs: &[(usize, usize)],
    b_lower: &nalgebra::DMatrix<f64>,
    seed: u64,
    t: u64,
) -> Result<ForwardDraw> {
    let mut rng = substream(seed, t, Phase::Diagnostics, 0);
    let prior = sample_prior(&cfg.hyperparameters, cfg.num_users, cfg.num_items, 0.0, &mut rng)?;
    let c = if cfg.sample_cutpoints {
        let sd = cfg.hyperparameters.cutpoint_prior_sd;
        let mut c: Vec<f64> = (0..cfg.num_levels - 1)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        c.sort_by(f64::total_cmp);
        CutPoints::new(c)?
    } else {
        CutPoints::new(cfg.cutpoints.clone())?
    };
    let (v, ratings) = sample_observations(&prior, pairs, b_lower, &c, seed, t);
    Ok(ForwardDraw { prior, c, v, ratings })
}

/// Compares the prior-predictive joint of `(z, m, v)` with the one
/// reached by alternating a Gibbs sweep and a fresh draw of the ratings.
/// Both must agree when every conditional is correct.
pub fn geweke_test(cfg: &GewekeConfig) -> Result<GewekeReport> {
    let hp = &cfg.hyperparameters;
    hp.validate(hp.num_aspects())?;
    if cfg.chain_sweeps < cfg.num_batches || cfg.forward_draws < 2 {
        return Err(Error::InvalidConfig("too few Geweke iterations".into()));
    }
    if cfg.cutpoints.len() + 1 != cfg.num_levels {
        return Err(Error::InvalidConfig("cut-points do not match the level count".into()));
    }
    let b_lower = linalg::cholesky(&hp.response_cov, "response covariance")?.l();
    let pairs: Vec<(usize, usize)> = (0..cfg.num_users)
        .flat_map(|j| (0..cfg.num_items).map(move |i| (j, i)))
        .collect();
    let names = test_function_names(cfg, pairs.len());
    let width = names.len();
    let forward_seed = cfg.seed ^ 0x6a09_e667_f3bc_c908;
    let chain_seed = cfg.seed ^ 0xbb67_ae85_84ca_a73b;

    let mut forward = Vec::with_capacity(cfg.forward_draws * width);
    for t in 0..cfg.forward_draws {
        let d = forward_draw(cfg, &pairs, &b_lower, forward_seed, t as u64)?;
        let c = cfg.sample_cutpoints.then_some(&d.c);
        push_values(&mut forward, &d.prior.z, &d.prior.m, &d.v, c);
    }

    // The chain starts from an exact joint draw, so no burn-in is needed.
    let ForwardDraw { prior, c, v, ratings } = forward_draw(cfg, &pairs, &b_lower, chain_seed, u64::MAX)?;
    let template = RatingsDataset::from_parts(
        cfg.num_levels,
        (1..=hp.num_aspects()).map(|a| format!("aspect{a}")).collect(),
        (0..cfg.num_users).map(|j| format!("u{j}")).collect(),
        (0..cfg.num_items).map(|i| format!("i{i}")).collect(),
        pairs
            .iter()
            .zip(ratings)
            .map(|(&(user, item), ratings)| Observation { user, item, ratings })
            .collect(),
    );
    let mut run = RunConfig::default_for(cfg.num_levels);
    run.seed = chain_seed;
    run.init_cutpoints = c.as_slice().to_vec();
    run.update_cutpoints = cfg.sample_cutpoints;
    run.cutpoint_rule = CutpointRule::Augmented;
    run.parallel_blocks = false;
    run.ancillary_updates = cfg.ancillary_updates;
    let mut data = template;
    let mut state: LatentState = Sampler::new(&data, hp, &run, BaselineKind::FULL)?.state_from_parts(
        prior.z,
        prior.m,
        prior.s,
        v,
        c,
        prior.mu,
        prior.sigma,
        0,
    )?;
    let mut chain = Vec::with_capacity(cfg.chain_sweeps * width);
    for _ in 0..cfg.chain_sweeps {
        Sampler::new(&data, hp, &run, BaselineKind::FULL)?.sweep(&mut state)?;
        let fresh: Vec<Vec<u8>> = state
            .v
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let mut rng = substream(chain_seed, state.sweep, Phase::Simulate, 1 + n as u64);
                sample_ratings(v, &state.c, &mut rng)
            })
            .collect();
        data = data.with_ratings(fresh);
        let c = cfg.sample_cutpoints.then_some(&state.c);
        push_values(&mut chain, &state.z, &state.m, &state.v, c);
    }

    let column = |rows: &[f64], f: usize, power: i32| -> Vec<f64> {
        rows.chunks_exact(width).map(|r| r[f].powi(power)).collect()
    };
    let mut stats = Vec::with_capacity(2 * width);
    for (f, name) in names.into_iter().enumerate() {
        for power in [1, 2] {
            let fw = column(&forward, f, power);
            let ch = column(&chain, f, power);
            let (fm, cm) = (mean(&fw), mean(&ch));
            let fse = (variance(&fw) / fw.len() as f64).sqrt();
            let cse = batch_means_se(&ch, cfg.num_batches);
            stats.push(GewekeStat {
                name: name.clone(),
                moment: power as u8,
                forward: fm,
                forward_se: fse,
                chain: cm,
                chain_se: cse,
                z: (fm - cm) / (fse * fse + cse * cse).sqrt(),
            });
        }
    }
    Ok(GewekeReport { stats })
}

/// Summary of a scalar Markov-chain trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub len: usize,
    pub mean: f64,
    pub sd: f64,
    /// Batch-means standard error of the mean.
    pub std_error: f64,
    /// `variance / std_error^2`.
    pub effective_size: f64,
    /// Least-squares slope per step; near zero once stationary.
    pub slope: f64,
}

impl TraceSummary {
    pub fn of(series: &[f64], num_batches: usize) -> Result<Self> {
        if series.len() < 2 * num_batches.max(1) {
            return Err(Error::TooFewObservations {
                needed: 2 * num_batches.max(1),
                found: series.len(),
            });
        }
        let var = variance(series);
        let se = batch_means_se(series, num_batches);
        Ok(Self {
            len: series.len(),
            mean: mean(series),
            sd: var.sqrt(),
            std_error: se,
            effective_size: if se > 0.0 { var / (se * se) } else { series.len() as f64 },
            slope: trend_slope(series),
        })
    }
}
