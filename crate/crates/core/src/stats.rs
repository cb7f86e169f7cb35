//! Summary statistics and goodness-of-fit tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Population standard deviation (divides by `n`).
pub fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov statistic and p-value against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

/// Two-sample Kolmogorov-Smirnov statistic and p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    (d, kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d))
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(stat)
}

/// Pearson chi-square goodness of fit of category counts against
/// probabilities. Cells with expected count below 5 are merged into a
/// single tail cell. Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n;
        if e < 5.0 {
            pooled.0 += c as f64;
            pooled.1 += e;
        } else {
            cells.push((c as f64, e));
        }
    }
    if pooled.1 > 0.0 || pooled.0 > 0.0 {
        cells.push(pooled);
    }
    let stat: f64 = cells
        .iter()
        .map(|&(o, e)| {
            if e > 0.0 {
                (o - e).powi(2) / e
            } else if o > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    let df = cells.len().saturating_sub(1);
    if df == 0 {
        return (stat, 0, 1.0);
    }
    (stat, df, chi_square_sf(stat, df))
}

/// One-sided paired t-test of `H1: mean(a - b) > 0`. Returns `(t, p)`.
pub fn paired_t_test_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let se = (variance(&d) / n).sqrt();
    let m = mean(&d);
    if se == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        return (m.signum() * f64::INFINITY, p);
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("at least two pairs");
    (t, dist.sf(t))
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(series: &[f64], num_batches: usize) -> f64 {
    let size = series.len() / num_batches;
    assert!(size >= 1, "series shorter than the batch count");
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(num_batches)
        .map(mean)
        .collect();
    (variance(&means) / means.len() as f64).sqrt()
}

/// Least-squares slope of `ys` against `0..n`.
pub fn trend_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        sxy += (i as f64 - mx) * (y - my);
        sxx += (i as f64 - mx).powi(2);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
