//! Conditional-update checks against independently computed targets on
//! small frozen states. Gaussian conditionals are compared with a Kalman
//! oracle; non-Gaussian ones with a one-step invariance check, where the
//! old value is drawn exactly from the target and one update must return
//! another exact draw.

use aspect_bias::data::validate_dataset;
use aspect_bias::stats::{chi_square_gof, ks_one_sample};
use aspect_bias::{CutPoints, CutpointRule, Hyperparameters, LatentState, RatingsDataset, RawRating, RunConfig, Sampler};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{level_probabilities, sequential_gaussian_posterior, GridCdf};

/// Goodness-of-fit p-value of one check.
#[derive(Clone, Debug)]
pub struct PValue {
    pub name: String,
    pub p: f64,
}

impl PValue {
    fn new(name: String, p: f64) -> Self {
        Self { name, p }
    }
}

pub const DRAWS: u64 = 100_000;

fn dataset(rows: &[(&str, &str, &[i64])], levels: usize) -> RatingsDataset {
    let raw: Vec<RawRating> = rows.iter().map(|(u, i, r)| RawRating::new(*u, *i, r.to_vec())).collect();
    validate_dataset(&raw, levels, None).unwrap()
}

fn run_config(levels: usize, rule: CutpointRule) -> RunConfig {
    let mut cfg = RunConfig::default_for(levels);
    cfg.seed = 2024;
    cfg.parallel_blocks = false;
    cfg.cutpoint_rule = rule;
    cfg
}

/// Two aspects, three levels, four users in two groups, three items.
fn two_aspect_data() -> RatingsDataset {
    dataset(
        &[
            ("u0", "i0", &[3, 2]),
            ("u0", "i1", &[1, 2]),
            ("u1", "i0", &[2, 3]),
            ("u1", "i2", &[1, 1]),
            ("u2", "i1", &[3, 3]),
            ("u2", "i2", &[2, 1]),
            ("u3", "i0", &[1, 3]),
        ],
        3,
    )
}

fn two_aspect_hp() -> Hyperparameters {
    let mut hp = Hyperparameters::with_groups(2, 2);
    hp.alpha = vec![0.7, 1.3];
    hp.lambda = dmatrix![1.5, 0.4; 0.4, 0.8];
    hp.response_cov = dmatrix![0.3, 0.1; 0.1, 0.2];
    hp
}

fn two_aspect_state(sampler: &Sampler) -> LatentState {
    let v = vec![
        dvector![1.2, 0.3],
        dvector![-1.1, 0.2],
        dvector![0.4, 1.5],
        dvector![-0.9, -1.4],
        dvector![1.7, 1.1],
        dvector![0.1, -0.8],
        dvector![-1.3, 1.2],
    ];
    sampler
        .state_from_parts(
            vec![dvector![0.5, 0.2], dvector![-0.3, 0.4], dvector![0.1, -0.6]],
            vec![dvector![0.4, -0.2], dvector![-0.5, 0.6]],
            vec![0, 1, 0, 1],
            v,
            CutPoints::new(vec![-1.0, 1.0]).unwrap(),
            dvector![0.2, -0.1],
            dmatrix![1.2, 0.3; 0.3, 0.9],
            0,
        )
        .unwrap()
}

fn normal_cdf(mean: f64, var: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(mean, var.sqrt()).unwrap();
    move |x| d.cdf(x)
}

/// KS of the first coordinate and of the coordinate sum against the
/// Gaussian oracle.
fn gaussian_draws(out: &mut Vec<PValue>, draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>, what: &str) {
    let first: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let (_, p) = ks_one_sample(&first, normal_cdf(mean[0], cov[(0, 0)]));
    out.push(PValue::new(format!("{what} first coordinate"), p));
    let ones = DVector::from_element(mean.len(), 1.0);
    let sums: Vec<f64> = draws.iter().map(|d| d.sum()).collect();
    let (_, p) = ks_one_sample(&sums, normal_cdf(mean.sum(), (ones.transpose() * cov * &ones)[0]));
    out.push(PValue::new(format!("{what} coordinate sum"), p));
}

/// Group biases against the Kalman posterior.
pub fn group_bias() -> Vec<PValue> {
    let mut out = Vec::new();
    let data = two_aspect_data();
    let hp = two_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let mut state = two_aspect_state(&sampler);

    for g in 0..2 {
        let residuals: Vec<DVector<f64>> = data
            .observations()
            .iter()
            .zip(&state.v)
            .filter(|(o, _)| state.s[o.user] == g)
            .map(|(o, v)| v - &state.z[o.item])
            .collect();
        let (mean, cov) =
            sequential_gaussian_posterior(&DVector::zeros(2), &hp.lambda, &residuals, &hp.response_cov);
        let draws: Vec<DVector<f64>> = (0..DRAWS)
            .map(|t| {
                state.sweep = t;
                sampler.sample_group_bias(&mut state).unwrap();
                state.m[g].clone()
            })
            .collect();
        gaussian_draws(&mut out, &draws, &mean, &cov, &format!("m[{g}]"));
    }
    out
}

/// Intrinsic quality against the Kalman posterior.
pub fn intrinsic_quality() -> Vec<PValue> {
    let mut out = Vec::new();
    let data = two_aspect_data();
    let hp = two_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let mut state = two_aspect_state(&sampler);

    for i in 0..3 {
        let residuals: Vec<DVector<f64>> = data
            .observations()
            .iter()
            .zip(&state.v)
            .filter(|(o, _)| o.item == i)
            .map(|(o, v)| v - &state.m[state.s[o.user]])
            .collect();
        let (mean, cov) =
            sequential_gaussian_posterior(&state.mu, &state.sigma, &residuals, &hp.response_cov);
        let draws: Vec<DVector<f64>> = (0..DRAWS)
            .map(|t| {
                state.sweep = t;
                sampler.sample_intrinsic(&mut state).unwrap();
                state.z[i].clone()
            })
            .collect();
        gaussian_draws(&mut out, &draws, &mean, &cov, &format!("z[{i}]"));
    }
    out
}

fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x - mean;
    let inv = cov.clone().try_inverse().unwrap();
    -0.5 * (d.transpose() * inv * &d)[0] - 0.5 * cov.determinant().ln()
}

fn normalized(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Categorical draws of user 0's group, which is updated first in a scan.
fn user_zero_counts(sampler: &Sampler, state: &LatentState, ancillary: bool) -> Vec<u64> {
    let mut counts = vec![0u64; state.m.len()];
    for t in 0..DRAWS {
        let mut st = state.clone();
        st.sweep = t;
        if ancillary {
            sampler.sample_ancillary_groups(&mut st);
        } else {
            sampler.sample_user_groups(&mut st);
        }
        counts[st.s[0]] += 1;
    }
    counts
}

/// User 0's group against the collapsed Gaussian-likelihood probabilities.
pub fn user_group() -> PValue {
    let data = two_aspect_data();
    let hp = two_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let state = two_aspect_state(&sampler);

    // Other users: groups [1, 0, 1].
    let others = [1usize, 2];
    let log_w: Vec<f64> = (0..2)
        .map(|g| {
            let prior = (others[g] as f64 + hp.alpha[g]).ln();
            let lik: f64 = data
                .observations()
                .iter()
                .zip(&state.v)
                .filter(|(o, _)| o.user == 0)
                .map(|(o, v)| gaussian_log_density(v, &(&state.z[o.item] + &state.m[g]), &hp.response_cov))
                .sum();
            prior + lik
        })
        .collect();
    let probs = normalized(&log_w);
    let (_, _, p) = chi_square_gof(&user_zero_counts(&sampler, &state, false), &probs);
    PValue::new("s[0]".into(), p)
}

/// User 0's group with its noise held fixed, against ordinal-likelihood
/// probabilities.
pub fn ancillary_user_group() -> PValue {
    let data = two_aspect_data();
    let hp = two_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let state = two_aspect_state(&sampler);

    let others = [1usize, 2];
    let c = state.c.as_slice().to_vec();
    let log_w: Vec<f64> = (0..2)
        .map(|g| {
            let shift = &state.m[g] - &state.m[state.s[0]];
            let lik: f64 = data
                .observations()
                .iter()
                .zip(&state.v)
                .filter(|(o, _)| o.user == 0)
                .map(|(o, v)| {
                    o.ratings
                        .iter()
                        .enumerate()
                        .map(|(a, &r)| level_probabilities(v[a] + shift[a], &c)[r as usize - 1].ln())
                        .sum::<f64>()
                })
                .sum();
            (others[g] as f64 + hp.alpha[g]).ln() + lik
        })
        .collect();
    let probs = normalized(&log_w);
    let (_, _, p) = chi_square_gof(&user_zero_counts(&sampler, &state, true), &probs);
    PValue::new("ancillary s[0]".into(), p)
}

/// One aspect, three levels, two users in one group each, two items.
fn one_aspect_data() -> RatingsDataset {
    dataset(
        &[
            ("u0", "i0", &[2]),
            ("u0", "i1", &[3]),
            ("u1", "i0", &[1]),
            ("u1", "i1", &[2]),
            ("u2", "i0", &[3]),
        ],
        3,
    )
}

fn one_aspect_hp() -> Hyperparameters {
    let mut hp = Hyperparameters::with_groups(1, 2);
    hp.lambda = dmatrix![2.0];
    hp.response_cov = dmatrix![0.4];
    hp.cutpoint_prior_sd = 1.5;
    hp
}

fn one_aspect_state(sampler: &Sampler, c: Vec<f64>) -> LatentState {
    sampler
        .state_from_parts(
            vec![dvector![0.3], dvector![-0.4]],
            vec![dvector![0.5], dvector![-0.7]],
            vec![0, 1, 0],
            vec![dvector![0.2], dvector![1.4], dvector![-1.5], dvector![0.3], dvector![2.1]],
            CutPoints::new(c).unwrap(),
            dvector![0.1],
            dmatrix![1.3],
            0,
        )
        .unwrap()
}

fn log_level(r: u8, v: f64, c: &[f64]) -> f64 {
    level_probabilities(v, c)[r as usize - 1].ln()
}

fn grid(log_density: impl Fn(f64) -> f64) -> GridCdf {
    GridCdf::new(-20.0, 20.0, 40_001, log_density)
}

/// Draws the old value from `target`, applies `update` with sweep `t`, and
/// checks the result is still distributed as `target`.
fn invariance(target: &GridCdf, what: &str, mut update: impl FnMut(f64, u64) -> f64) -> PValue {
    let mut rng = aspect_bias::rng::seeded(99);
    let out: Vec<f64> = (0..DRAWS)
        .map(|t| {
            let old = target.quantile(rng.random::<f64>());
            update(old, t)
        })
        .collect();
    let (_, p) = ks_one_sample(&out, |x| target.cdf(x));
    PValue::new(what.to_string(), p)
}

/// Joint auxiliary and latent-response update, by invariance.
pub fn latent_responses() -> Vec<PValue> {
    let data = one_aspect_data();
    let hp = one_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let c = vec![-0.8, 0.9];
    let mut state = one_aspect_state(&sampler, c.clone());
    let b = hp.response_cov[(0, 0)];

    let mut out = Vec::new();
    for n in [0usize, 1, 2] {
        let obs = data.observations()[n].clone();
        let mean = state.z[obs.item][0] + state.m[state.s[obs.user]][0];
        let r = obs.ratings[0];
        let target = grid(|v| -0.5 * (v - mean).powi(2) / b + log_level(r, v, &c));
        out.push(invariance(&target, &format!("v[{n}] at level {r}"), |old, t| {
            state.v[n][0] = old;
            state.sweep = t;
            sampler.sample_latent_responses(&mut state).unwrap();
            state.v[n][0]
        }));
    }
    out
}

/// Largest spread, over random points, of the log ratio between the
/// augmented density and the Gaussian the sampler draws from given fixed
/// auxiliaries. Zero when they agree up to a constant.
pub fn latent_response_gaussian_error() -> f64 {
    let mut worst: f64 = 0.0;
    let data = two_aspect_data();
    let hp = two_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let state = two_aspect_state(&sampler);
    let c = state.c.as_slice().to_vec();
    let mut rng = aspect_bias::rng::seeded(5);

    for n in 0..data.len() {
        let obs = &data.observations()[n];
        let omega: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..2.0)).collect();
        let prior_mean = &state.z[obs.item] + &state.m[state.s[obs.user]];
        // exp(kappa psi - omega psi^2 / 2) per contributing stick,
        // psi = c_k - v, kappa = +1/2 at the observed level and -1/2 below.
        let augmented = |v: &DVector<f64>| {
            let mut total = gaussian_log_density(v, &prior_mean, &hp.response_cov);
            for (a, &r) in obs.ratings.iter().enumerate() {
                for k in 1..=(r as usize).min(2) {
                    let psi = c[k - 1] - v[a];
                    let kappa = if k == r as usize { 0.5 } else { -0.5 };
                    total += kappa * psi - 0.5 * omega[a * 2 + k - 1] * psi * psi;
                }
            }
            total
        };
        let (precision, info) = sampler.latent_posterior(&state, n, &omega);
        let gaussian = |v: &DVector<f64>| -0.5 * (v.transpose() * &precision * v)[0] + info.dot(v);
        let points: Vec<DVector<f64>> = (0..20)
            .map(|_| dvector![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let offsets: Vec<f64> = points.iter().map(|p| augmented(p) - gaussian(p)).collect();
        for o in &offsets {
            worst = worst.max((o - offsets[0]).abs());
        }
    }
    worst
}

/// Group bias update with the noise held fixed, by invariance.
pub fn ancillary_bias() -> PValue {
    let data = one_aspect_data();
    let hp = one_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let c = vec![-0.8, 0.9];
    let mut state = one_aspect_state(&sampler, c.clone());
    let lambda = hp.lambda[(0, 0)];
    let g = 0;
    let members: Vec<usize> = (0..data.len()).filter(|&n| state.s[data.observations()[n].user] == g).collect();
    // Noise held fixed: e = v - z - m.
    let noise: Vec<f64> = members
        .iter()
        .map(|&n| state.v[n][0] - state.z[data.observations()[n].item][0] - state.m[g][0])
        .collect();
    let base: Vec<f64> = members
        .iter()
        .zip(&noise)
        .map(|(&n, e)| e + state.z[data.observations()[n].item][0])
        .collect();
    let target = grid(|m| {
        -0.5 * m * m / lambda
            + members
                .iter()
                .zip(&base)
                .map(|(&n, x)| log_level(data.observations()[n].ratings[0], x + m, &c))
                .sum::<f64>()
    });
    invariance(&target, "ancillary m[0]", |old, t| {
        state.m[g][0] = old;
        for (&n, x) in members.iter().zip(&base) {
            state.v[n][0] = x + old;
        }
        state.sweep = t;
        sampler.sample_ancillary_bias(&mut state).unwrap();
        state.m[g][0]
    })
}

/// Intrinsic quality update with the noise held fixed, by invariance.
pub fn ancillary_intrinsic() -> PValue {
    let data = one_aspect_data();
    let hp = one_aspect_hp();
    let cfg = run_config(3, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let c = vec![-0.8, 0.9];
    let mut state = one_aspect_state(&sampler, c.clone());
    let (mu, var) = (state.mu[0], state.sigma[(0, 0)]);
    let i = 0;
    let members: Vec<usize> = data.item_observations(i).to_vec();
    let base: Vec<f64> = members.iter().map(|&n| state.v[n][0] - state.z[i][0]).collect();
    let target = grid(|z| {
        -0.5 * (z - mu).powi(2) / var
            + members
                .iter()
                .zip(&base)
                .map(|(&n, x)| log_level(data.observations()[n].ratings[0], x + z, &c))
                .sum::<f64>()
    });
    invariance(&target, "ancillary z[0]", |old, t| {
        state.z[i][0] = old;
        for (&n, x) in members.iter().zip(&base) {
            state.v[n][0] = x + old;
        }
        state.sweep = t;
        sampler.sample_ancillary_intrinsic(&mut state).unwrap();
        state.z[i][0]
    })
}

/// Augmented cut-point update, by invariance.
pub fn augmented_cutpoint() -> PValue {
    let data = dataset(
        &[
            ("u0", "i0", &[1]),
            ("u0", "i1", &[2]),
            ("u1", "i0", &[2]),
            ("u1", "i1", &[1]),
            ("u2", "i0", &[2]),
        ],
        2,
    );
    let mut hp = Hyperparameters::with_groups(1, 2);
    hp.cutpoint_prior_sd = 1.5;
    let cfg = run_config(2, CutpointRule::Augmented);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    let v = [-0.6, 0.9, 0.2, 0.4, 1.6];
    let mut state = sampler
        .state_from_parts(
            vec![dvector![0.0], dvector![0.0]],
            vec![dvector![0.0], dvector![0.0]],
            vec![0, 1, 0],
            v.iter().map(|&x| dvector![x]).collect(),
            CutPoints::new(vec![0.0]).unwrap(),
            dvector![0.0],
            dmatrix![1.0],
            0,
        )
        .unwrap();
    let sd = hp.cutpoint_prior_sd;
    let target = grid(|c| {
        -0.5 * (c / sd).powi(2)
            + data
                .observations()
                .iter()
                .zip(&v)
                .map(|(o, &x)| log_level(o.ratings[0], x, &[c]))
                .sum::<f64>()
    });
    invariance(&target, "augmented c[1]", |old, t| {
        state.c = CutPoints::new(vec![old]).unwrap();
        state.sweep = t;
        sampler.sample_cutpoints(&mut state);
        state.c.as_slice()[0]
    })
}

/// Whether every response that sits in its observed level's most-probable
/// region under `reference` still does under `candidate`.
fn keeps_placed_responses(data: &RatingsDataset, v: &[DVector<f64>], reference: &[f64], candidate: &[f64]) -> bool {
    let best = |x: f64, c: &[f64]| {
        let p = level_probabilities(x, c);
        (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() + 1
    };
    data.observations().iter().zip(v).all(|(o, x)| {
        let r = o.ratings[0] as usize;
        best(x[0], reference) != r || best(x[0], candidate) == r
    })
}

/// Edge of the valid set for `c_1`, searched from `from` towards `to`.
fn validity_edge(valid: impl Fn(f64) -> bool, from: f64, to: f64) -> f64 {
    if valid(to) {
        return to;
    }
    let (mut inside, mut outside) = (from, to);
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if valid(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

/// Lemma-rule draw of `c_1` against the uniform law on the range found by
/// searching for where placed responses stay placed.
pub fn lemma_cutpoint() -> PValue {
    // Gaps wider than ln 2 so every level owns a nonempty region.
    let c = vec![-1.0, 0.5, 2.0];
    let data = dataset(
        &[
            ("u0", "i0", &[1]),
            ("u0", "i1", &[2]),
            ("u1", "i0", &[2]),
            ("u1", "i1", &[1]),
            ("u2", "i0", &[3]),
            ("u2", "i1", &[4]),
            ("u3", "i0", &[2]),
        ],
        4,
    );
    let hp = Hyperparameters::with_groups(1, 2);
    let cfg = run_config(4, CutpointRule::LemmaConsistent);
    let sampler = Sampler::full(&data, &hp, &cfg).unwrap();
    // The response at -0.3 with level 1 is misplaced and imposes nothing.
    let v: Vec<DVector<f64>> = [-1.8, -0.2, 0.2, -0.3, 1.2, 2.6, 0.0].iter().map(|&x| dvector![x]).collect();
    let state = sampler
        .state_from_parts(
            vec![dvector![0.0], dvector![0.0]],
            vec![dvector![0.0], dvector![0.0]],
            vec![0, 1, 0, 1],
            v.clone(),
            CutPoints::new(c.clone()).unwrap(),
            dvector![0.0],
            dmatrix![1.0],
            0,
        )
        .unwrap();

    let valid = |x: f64| {
        let mut cand = c.clone();
        cand[0] = x;
        keeps_placed_responses(&data, &v, &c, &cand)
    };
    let lo = validity_edge(valid, c[0], c[0] - 50.0);
    // The upper end is also capped a tenth of the gap below c_2.
    let hi = validity_edge(valid, c[0], c[1]).min(c[1] - 0.1 * (c[1] - c[0]));
    assert!(lo < c[0] && c[0] < hi, "oracle range ({lo}, {hi})");

    let draws: Vec<f64> = (0..DRAWS)
        .map(|t| {
            let mut st = state.clone();
            st.sweep = t;
            sampler.sample_cutpoints(&mut st);
            st.c.as_slice()[0]
        })
        .collect();
    let (_, p) = ks_one_sample(&draws, |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0));
    PValue::new("lemma c[1]".into(), p)
}
