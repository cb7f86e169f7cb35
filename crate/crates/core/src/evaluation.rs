//! Held-out metrics and posterior analyses.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_baseline, BaselineKind};
use crate::config::{Hyperparameters, RunConfig};
use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::gibbs::PosteriorSamples;
use crate::rng::{substream, Phase};
use crate::stats;

/// Splits observations into `k` folds. Each observation (a full rating
/// vector for one user-item pair) lands in exactly one test set. Training
/// sets keep the full user and item index space.
pub fn kfold_split(data: &RatingsDataset, k: usize, seed: u64) -> Result<Vec<(RatingsDataset, RatingsDataset)>> {
    Ok(fold_indices(data.len(), k, seed)?
        .into_iter()
        .map(|test_idx| {
            let mut in_test = vec![false; data.len()];
            for &n in &test_idx {
                in_test[n] = true;
            }
            let train_idx: Vec<usize> = (0..data.len()).filter(|&n| !in_test[n]).collect();
            (data.subset(&train_idx), data.subset(&test_idx))
        })
        .collect())
}

/// Observation indices of each test fold, sorted within the fold.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewObservations { needed: k, found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, 0, Phase::Folds, 0));
    let mut folds = vec![Vec::new(); k];
    for (pos, &idx) in order.iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Per-aspect and pooled root mean squared error.
pub fn rmse(predicted: &[Vec<f64>], observed: &[Vec<u8>]) -> Result<(Vec<f64>, f64)> {
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predicted.len() != observed.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} observations",
            predicted.len(),
            observed.len()
        )));
    }
    let a = observed[0].len();
    let mut sse = vec![0.0; a];
    for (p, o) in predicted.iter().zip(observed) {
        if p.len() != a || o.len() != a {
            return Err(Error::LengthMismatch("aspect counts differ".into()));
        }
        for ((s, &pa), &oa) in sse.iter_mut().zip(p).zip(o) {
            *s += (pa - oa as f64).powi(2);
        }
    }
    let n = predicted.len() as f64;
    let per_aspect: Vec<f64> = sse.iter().map(|s| (s / n).sqrt()).collect();
    let pooled = (sse.iter().sum::<f64>() / (n * a as f64)).sqrt();
    Ok((per_aspect, pooled))
}

/// Credit for a pair whose predictions tie while observations differ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieCredit {
    /// Counted as discordant.
    #[default]
    None,
    /// Counted as half concordant.
    Half,
}

/// How per-user pair counts combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FcpAggregation {
    /// Sum concordant and comparable pairs over all users.
    #[default]
    Pooled,
    /// Average the per-user fractions.
    PerUser,
}

/// One prediction for FCP: the user, predicted and observed ratings.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    pub user: usize,
    pub predicted: Vec<f64>,
    pub observed: Vec<u8>,
}

/// Fraction of concordant item pairs per aspect. Pairs with equal observed
/// ratings are skipped; aspects without any comparable pair give NaN.
pub fn fcp(entries: &[RankedPrediction], ties: TieCredit, aggregation: FcpAggregation) -> Result<Vec<f64>> {
    let a = entries.first().map(|e| e.observed.len()).ok_or(Error::EmptyInput)?;
    let mut by_user: std::collections::BTreeMap<usize, Vec<&RankedPrediction>> = Default::default();
    for e in entries {
        by_user.entry(e.user).or_default().push(e);
    }
    let tie_credit = match ties {
        TieCredit::None => 0.0,
        TieCredit::Half => 0.5,
    };
    let mut result = Vec::with_capacity(a);
    let mut any = false;
    for asp in 0..a {
        let mut pooled = (0.0, 0usize);
        let mut fractions = Vec::new();
        for items in by_user.values() {
            let mut good = 0.0;
            let mut total = 0usize;
            for x in 0..items.len() {
                for y in x + 1..items.len() {
                    let (p, q) = (items[x], items[y]);
                    let dobs = p.observed[asp] as i32 - q.observed[asp] as i32;
                    if dobs == 0 {
                        continue;
                    }
                    total += 1;
                    let dpred = p.predicted[asp] - q.predicted[asp];
                    if dpred == 0.0 {
                        good += tie_credit;
                    } else if (dpred > 0.0) == (dobs > 0) {
                        good += 1.0;
                    }
                }
            }
            if total > 0 {
                pooled.0 += good;
                pooled.1 += total;
                fractions.push(good / total as f64);
            }
        }
        if pooled.1 == 0 {
            result.push(f64::NAN);
            continue;
        }
        any = true;
        result.push(match aggregation {
            FcpAggregation::Pooled => pooled.0 / pooled.1 as f64,
            FcpAggregation::PerUser => stats::mean(&fractions),
        });
    }
    if any {
        Ok(result)
    } else {
        Err(Error::NoComparablePairs)
    }
}

/// Mean over user-item pairs of the Pearson correlation between predicted
/// and observed aspect ranks. Pairs whose observed ratings are all equal
/// are skipped.
pub fn aspect_ranking_pearson(pairs: &[(Vec<f64>, Vec<u8>)]) -> Result<f64> {
    let mut values = Vec::new();
    for (pred, obs) in pairs {
        if obs.len() < 2 {
            continue;
        }
        let obs: Vec<f64> = obs.iter().map(|&x| x as f64).collect();
        let rp = stats::average_ranks(pred);
        let ro = stats::average_ranks(&obs);
        // A constant prediction has no ranking; it correlates as zero.
        match (stats::pearson(&rp, &ro), stats::variance(&ro) > 0.0) {
            (Some(r), _) => values.push(r),
            (None, true) => values.push(0.0),
            (None, false) => {}
        }
    }
    if values.is_empty() {
        return Err(Error::NoEvaluablePairs);
    }
    Ok(stats::mean(&values))
}

/// Per-observation log-likelihood of a test set under the posterior, and
/// its mean. Users and items are matched by id; unknown ones fall back to
/// the population-level cold-start rule.
pub fn test_loglik(samples: &PosteriorSamples, train: &RatingsDataset, test: &RatingsDataset) -> Result<(f64, Vec<f64>)> {
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    if samples.states.is_empty() {
        return Err(Error::EmptySamples);
    }
    let per_obs: Vec<f64> = test
        .observations()
        .par_iter()
        .map(|obs| {
            let (u, i) = resolve(train, test, obs.user, obs.item);
            samples.observation_log_likelihood(u, i, &obs.ratings)
        })
        .collect();
    Ok((stats::mean(&per_obs), per_obs))
}

fn resolve(train: &RatingsDataset, test: &RatingsDataset, user: usize, item: usize) -> (Option<usize>, Option<usize>) {
    (
        train.user_index(&test.user_ids()[user]),
        train.item_index(&test.item_ids()[item]),
    )
}

/// Predicted rating vectors for every test observation.
pub fn predict_all(samples: &PosteriorSamples, train: &RatingsDataset, test: &RatingsDataset) -> Vec<Vec<f64>> {
    test.observations()
        .par_iter()
        .map(|obs| {
            let (u, i) = resolve(train, test, obs.user, obs.item);
            samples.predict(u, i).expected
        })
        .collect()
}

/// Within-group and whole-item rating spread for one (item, aspect, group).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSdPoint {
    pub item: usize,
    pub aspect: usize,
    pub group: usize,
    pub group_size: usize,
    pub group_sd: f64,
    pub control_sd: f64,
}

/// For each (item, aspect, group) with at least two raters in the group:
/// the population standard deviation of that group's ratings and of all
/// the item's ratings.
pub fn group_sd_points(groups: &[usize], data: &RatingsDataset) -> Vec<GroupSdPoint> {
    let mut points = Vec::new();
    let num_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    for i in 0..data.num_items() {
        let obs: Vec<_> = data
            .item_observations(i)
            .iter()
            .map(|&n| &data.observations()[n])
            .collect();
        if obs.len() < 2 {
            continue;
        }
        for a in 0..data.num_aspects() {
            let all: Vec<f64> = obs.iter().map(|o| o.ratings[a] as f64).collect();
            let control = stats::population_sd(&all);
            for g in 0..num_groups {
                let mine: Vec<f64> = obs
                    .iter()
                    .filter(|o| groups[o.user] == g)
                    .map(|o| o.ratings[a] as f64)
                    .collect();
                if mine.len() >= 2 {
                    points.push(GroupSdPoint {
                        item: i,
                        aspect: a,
                        group: g,
                        group_size: mine.len(),
                        group_sd: stats::population_sd(&mine),
                        control_sd: control,
                    });
                }
            }
        }
    }
    points
}

/// [`group_sd_points`] with each user's most frequent aligned group.
pub fn group_sd_analysis(samples: &PosteriorSamples, data: &RatingsDataset) -> Result<Vec<GroupSdPoint>> {
    Ok(group_sd_points(&samples.modal_groups()?, data))
}

/// Fraction of points whose group spread does not exceed the control.
pub fn fraction_tighter(points: &[GroupSdPoint]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    points.iter().filter(|p| p.group_sd <= p.control_sd).count() as f64 / points.len() as f64
}

/// Rating differences for one user, one aspect and two items.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicDelta {
    pub user: usize,
    pub aspect: usize,
    pub first: usize,
    pub second: usize,
    /// Difference of the user's observed ratings.
    pub obs: f64,
    /// Difference of the items' average observed ratings.
    pub avg: f64,
    /// Difference of the items' intrinsic quality on the rating scale.
    pub int: f64,
}

/// Mean observed difference within one bin of a predictor difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaBin {
    pub center: f64,
    pub mean_obs: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicDeltaReport {
    pub deltas: Vec<IntrinsicDelta>,
    pub bins_int: Vec<DeltaBin>,
    pub bins_avg: Vec<DeltaBin>,
    /// Pearson correlation of the observed difference with each predictor;
    /// `None` with fewer than two points or no spread.
    pub pearson_int: Option<f64>,
    pub pearson_avg: Option<f64>,
}

pub const DEFAULT_MAX_RATINGS: usize = 30;
pub const DEFAULT_MIN_GAP: f64 = 0.5;
pub const DELTA_BIN_WIDTH: f64 = 0.5;

/// Compares how well item averages and intrinsic quality explain one
/// user's rating differences between items.
///
/// An item qualifies on an aspect when it has fewer than `max_ratings`
/// ratings and its intrinsic quality (on the rating scale) differs from its
/// average rating by at least `min_gap`. Every user who rated two items
/// qualifying on the same aspect contributes one triple.
pub fn intrinsic_deltas(
    intrinsic: &[Vec<f64>],
    data: &RatingsDataset,
    max_ratings: usize,
    min_gap: f64,
) -> IntrinsicDeltaReport {
    let a = data.num_aspects();
    let averages: Vec<Vec<f64>> = (0..data.num_items())
        .map(|i| {
            let obs = data.item_observations(i);
            (0..a)
                .map(|asp| {
                    let sum: f64 = obs.iter().map(|&n| data.observations()[n].ratings[asp] as f64).sum();
                    if obs.is_empty() {
                        f64::NAN
                    } else {
                        sum / obs.len() as f64
                    }
                })
                .collect()
        })
        .collect();
    let qualifies = |i: usize, asp: usize| {
        let n = data.item_observations(i).len();
        n > 0 && n < max_ratings && (intrinsic[i][asp] - averages[i][asp]).abs() >= min_gap
    };
    let mut deltas = Vec::new();
    for j in 0..data.num_users() {
        let obs = data.user_observations(j);
        for asp in 0..a {
            for x in 0..obs.len() {
                for y in x + 1..obs.len() {
                    let (p, q) = (&data.observations()[obs[x]], &data.observations()[obs[y]]);
                    if !(qualifies(p.item, asp) && qualifies(q.item, asp)) {
                        continue;
                    }
                    deltas.push(IntrinsicDelta {
                        user: j,
                        aspect: asp,
                        first: p.item,
                        second: q.item,
                        obs: p.ratings[asp] as f64 - q.ratings[asp] as f64,
                        avg: averages[p.item][asp] - averages[q.item][asp],
                        int: intrinsic[p.item][asp] - intrinsic[q.item][asp],
                    });
                }
            }
        }
    }
    let obs: Vec<f64> = deltas.iter().map(|d| d.obs).collect();
    let int: Vec<f64> = deltas.iter().map(|d| d.int).collect();
    let avg: Vec<f64> = deltas.iter().map(|d| d.avg).collect();
    IntrinsicDeltaReport {
        bins_int: bin_means(&int, &obs),
        bins_avg: bin_means(&avg, &obs),
        pearson_int: stats::pearson(&obs, &int),
        pearson_avg: stats::pearson(&obs, &avg),
        deltas,
    }
}

/// [`intrinsic_deltas`] with intrinsic quality taken from the posterior.
pub fn intrinsic_delta_analysis(
    samples: &PosteriorSamples,
    data: &RatingsDataset,
    max_ratings: usize,
    min_gap: f64,
) -> Result<IntrinsicDeltaReport> {
    let intrinsic = (0..data.num_items())
        .map(|i| samples.intrinsic_rating(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(intrinsic_deltas(&intrinsic, data, max_ratings, min_gap))
}

/// Means of `ys` in bins of width [`DELTA_BIN_WIDTH`] centred on multiples
/// of the width, ordered by centre.
fn bin_means(xs: &[f64], ys: &[f64]) -> Vec<DeltaBin> {
    let mut bins: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
    for (&x, &y) in xs.iter().zip(ys) {
        let key = (x / DELTA_BIN_WIDTH).round() as i64;
        let e = bins.entry(key).or_insert((0.0, 0));
        e.0 += y;
        e.1 += 1;
    }
    bins.into_iter()
        .map(|(k, (sum, count))| DeltaBin {
            center: k as f64 * DELTA_BIN_WIDTH,
            mean_obs: sum / count as f64,
            count,
        })
        .collect()
}

/// Held-out metrics of one fitted model on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub num_test: usize,
    pub per_aspect_rmse: Vec<f64>,
    pub rmse: f64,
    pub per_aspect_fcp: Vec<f64>,
    pub mean_test_loglik: f64,
    /// NaN when no test pair has observed rank variation.
    pub aspect_ranking_pearson: f64,
    #[serde(default)]
    pub group_sd_pairs: Vec<GroupSdPoint>,
    #[serde(default)]
    pub intrinsic_deltas: Option<IntrinsicDeltaReport>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub ties: TieCredit,
    pub aggregation: FcpAggregation,
}

/// Scores a fitted model on a test set.
pub fn evaluate_fit(
    samples: &PosteriorSamples,
    train: &RatingsDataset,
    test: &RatingsDataset,
    opts: MetricOptions,
) -> Result<(EvaluationReport, Vec<f64>)> {
    let predicted = predict_all(samples, train, test);
    let observed: Vec<Vec<u8>> = test.observations().iter().map(|o| o.ratings.clone()).collect();
    let (per_aspect_rmse, pooled) = rmse(&predicted, &observed)?;
    let ranked: Vec<RankedPrediction> = test
        .observations()
        .iter()
        .zip(&predicted)
        .map(|(o, p)| RankedPrediction {
            user: o.user,
            predicted: p.clone(),
            observed: o.ratings.clone(),
        })
        .collect();
    let per_aspect_fcp = match fcp(&ranked, opts.ties, opts.aggregation) {
        Ok(v) => v,
        Err(Error::NoComparablePairs) => vec![f64::NAN; test.num_aspects()],
        Err(e) => return Err(e),
    };
    let pairs: Vec<(Vec<f64>, Vec<u8>)> = predicted.into_iter().zip(observed).collect();
    let ranking = match aspect_ranking_pearson(&pairs) {
        Ok(r) => r,
        Err(Error::NoEvaluablePairs) => f64::NAN,
        Err(e) => return Err(e),
    };
    let (mean_ll, per_obs) = test_loglik(samples, train, test)?;
    Ok((
        EvaluationReport {
            model: samples.kind.name().to_string(),
            num_test: test.len(),
            per_aspect_rmse,
            rmse: pooled,
            per_aspect_fcp,
            mean_test_loglik: mean_ll,
            aspect_ranking_pearson: ranking,
            group_sd_pairs: Vec::new(),
            intrinsic_deltas: None,
        },
        per_obs,
    ))
}

/// Cross-validated scores of one model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub model: String,
    pub folds: Vec<EvaluationReport>,
    /// Held-out log-likelihood of every observation, in dataset order.
    pub per_observation_loglik: Vec<f64>,
}

impl CrossValidation {
    /// Fold-averaged report; the log-likelihood is averaged per observation.
    pub fn summary(&self) -> EvaluationReport {
        let k = self.folds.len() as f64;
        let a = self.folds[0].per_aspect_rmse.len();
        let avg_vec = |f: &dyn Fn(&EvaluationReport) -> &Vec<f64>| -> Vec<f64> {
            (0..a)
                .map(|x| nan_mean(self.folds.iter().map(|r| f(r)[x])))
                .collect()
        };
        EvaluationReport {
            model: self.model.clone(),
            num_test: self.folds.iter().map(|r| r.num_test).sum(),
            per_aspect_rmse: avg_vec(&|r| &r.per_aspect_rmse),
            rmse: self.folds.iter().map(|r| r.rmse).sum::<f64>() / k,
            per_aspect_fcp: avg_vec(&|r| &r.per_aspect_fcp),
            mean_test_loglik: stats::mean(&self.per_observation_loglik),
            aspect_ranking_pearson: nan_mean(self.folds.iter().map(|r| r.aspect_ranking_pearson)),
            group_sd_pairs: Vec::new(),
            intrinsic_deltas: None,
        }
    }
}

fn nan_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        stats::mean(&v)
    }
}

/// K-fold cross-validation of one model variant. Folds run in parallel;
/// each fit is seeded from `cfg.seed` and the fold number.
pub fn cross_validate(
    kind: BaselineKind,
    data: &RatingsDataset,
    hp: &Hyperparameters,
    cfg: &RunConfig,
    folds: usize,
    fold_seed: u64,
    opts: MetricOptions,
) -> Result<CrossValidation> {
    let test_sets = fold_indices(data.len(), folds, fold_seed)?;
    let splits = kfold_split(data, folds, fold_seed)?;
    let results: Vec<Result<(EvaluationReport, Vec<f64>)>> = splits
        .par_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let mut fold_cfg = cfg.clone();
            fold_cfg.seed = cfg.seed.wrapping_add(f as u64);
            let samples = fit_baseline(kind, train, hp, &fold_cfg)?;
            evaluate_fit(&samples, train, test, opts)
        })
        .collect();
    let mut per_obs = vec![f64::NAN; data.len()];
    let mut reports = Vec::with_capacity(folds);
    for (r, idx) in results.into_iter().zip(&test_sets) {
        let (report, ll) = r?;
        for (&n, &l) in idx.iter().zip(&ll) {
            per_obs[n] = l;
        }
        reports.push(report);
    }
    Ok(CrossValidation {
        model: kind.name().to_string(),
        folds: reports,
        per_observation_loglik: per_obs,
    })
}
