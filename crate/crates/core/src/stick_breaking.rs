//! Stick-breaking ordinal likelihood.
//!
//! With cut-points `c_1 < ... < c_{K-1}` and `eta_k = c_k - v`, level `k`
//! has probability `prod_{k' < k} (1 - f(eta_k')) f(eta_k)` where `f` is the
//! logistic sigmoid and `f(eta_K) = 1`. Log-probabilities are the primitive;
//! probabilities are derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing cut-points shared by all aspects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPoints(Vec<f64>);

impl CutPoints {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|x| !x.is_finite()) || c.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "cut-points must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self(c))
    }

    pub(crate) fn from_vec_unchecked(c: Vec<f64>) -> Self {
        debug_assert!(c.windows(2).all(|w| w[0] < w[1]));
        Self(c)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of ordinal levels `K` (one more than the number of cut-points).
    pub fn num_levels(&self) -> usize {
        self.0.len() + 1
    }

    /// 1-based access `c_k`.
    pub fn get(&self, k: usize) -> f64 {
        self.0[k - 1]
    }

    /// Upper edge `t_k` of the argmax cell of level `k`, for `k` in
    /// `1..=K-1`. The last one is `c_{K-1}` itself.
    pub fn cell_threshold(&self, k: usize) -> f64 {
        let km1 = self.0.len();
        debug_assert!(k >= 1 && k <= km1);
        if k == km1 {
            self.0[k - 1]
        } else {
            self.0[k - 1] + gap_offset(self.0[k] - self.0[k - 1])
        }
    }

    /// Cell `(t_{r-1}, t_r]` of level `r`, with infinite outer edges.
    pub fn cell(&self, r: usize) -> (f64, f64) {
        let k = self.num_levels();
        let lo = if r <= 1 { f64::NEG_INFINITY } else { self.cell_threshold(r - 1) };
        let hi = if r >= k { f64::INFINITY } else { self.cell_threshold(r) };
        (lo, hi)
    }

    /// Whether `v` lies in the threshold cell of level `r`.
    pub fn in_cell(&self, r: usize, v: f64) -> bool {
        let (lo, hi) = self.cell(r);
        v > lo && v <= hi
    }
}

/// `-ln(1 - e^{-d})`, the offset of a threshold above its cut-point for a
/// gap `d` to the next cut-point.
pub fn gap_offset(d: f64) -> f64 {
    -(-(-d).exp_m1()).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln f(x)` for the logistic sigmoid `f`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln (1 - f(x))`.
pub fn log1m_sigmoid(x: f64) -> f64 {
    -softplus(x)
}

pub fn sigmoid(x: f64) -> f64 {
    log_sigmoid(x).exp()
}

/// Log-probabilities of the `K` levels for latent response `v`.
pub fn log_category_probabilities(v: f64, c: &CutPoints) -> Vec<f64> {
    let k = c.num_levels();
    let mut out = Vec::with_capacity(k);
    let mut stick = 0.0;
    for &ck in c.as_slice() {
        let eta = ck - v;
        out.push(stick + log_sigmoid(eta));
        stick += log1m_sigmoid(eta);
    }
    out.push(stick);
    out
}

/// Probabilities of the `K` levels for latent response `v`.
pub fn category_probabilities(v: f64, c: &CutPoints) -> Vec<f64> {
    log_category_probabilities(v, c)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Log-probability of a single 1-based level.
pub fn log_level_probability(level: usize, v: f64, c: &CutPoints) -> f64 {
    let cs = c.as_slice();
    let mut lp = 0.0;
    for &ck in &cs[..level - 1] {
        lp += log1m_sigmoid(ck - v);
    }
    if level <= cs.len() {
        lp += log_sigmoid(cs[level - 1] - v);
    }
    lp
}

/// `ln prod_a P(r_a | v_a, c)`.
pub fn log_likelihood_vector(ratings: &[u8], v: &[f64], c: &CutPoints) -> f64 {
    assert_eq!(ratings.len(), v.len(), "rating and response lengths differ");
    ratings
        .iter()
        .zip(v)
        .map(|(&r, &va)| log_level_probability(r as usize, va, c))
        .sum()
}

/// 1-of-K encoding with the stick counters and Pólya-Gamma offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotRating {
    /// `x^k = 1` iff the level equals `k`.
    pub x: Vec<u8>,
    /// `N^k = 1 - sum_{k' < k} x^{k'}`.
    pub n: Vec<u8>,
    /// `kappa^k = x^k - N^k / 2`.
    pub kappa: Vec<f64>,
}

pub fn one_hot(level: usize, num_levels: usize) -> Result<OneHotRating> {
    if level < 1 || level > num_levels {
        return Err(Error::LevelOutOfRange {
            level,
            levels: num_levels,
        });
    }
    let x: Vec<u8> = (1..=num_levels).map(|k| u8::from(k == level)).collect();
    let mut n = Vec::with_capacity(num_levels);
    let mut seen = 0u8;
    for &xk in &x {
        n.push(1 - seen);
        seen += xk;
    }
    let kappa = x
        .iter()
        .zip(&n)
        .map(|(&xk, &nk)| xk as f64 - nk as f64 / 2.0)
        .collect();
    Ok(OneHotRating { x, n, kappa })
}

/// `kappa^k` for stick `k` (1-based, `k <= K - 1`) of an observed level,
/// or `None` when the stick does not contribute (`N^k = 0`).
#[inline]
pub(crate) fn stick_kappa(level: usize, k: usize) -> Option<f64> {
    if k < level {
        Some(-0.5)
    } else if k == level {
        Some(0.5)
    } else {
        None
    }
}

/// Threshold `t_k = c_k - ln(1 - e^{-(c_{k+1} - c_k)})` above which level
/// `k + 1` is more probable than level `k`. Valid for `k` in `1..=K-2`.
pub fn lemma_threshold(c: &CutPoints, k: usize) -> Result<f64> {
    let km1 = c.as_slice().len();
    if k < 1 || k + 1 > km1 {
        return Err(Error::IndexOutOfRange {
            index: k,
            range: format!("1..={}", km1.saturating_sub(1)),
        });
    }
    Ok(c.cell_threshold(k))
}

/// `sum_k k P(r = k)` per aspect, averaged over aligned posterior samples.
pub fn expected_rating(v_samples: &[Vec<f64>], c_samples: &[CutPoints]) -> Result<Vec<f64>> {
    if v_samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if v_samples.len() != c_samples.len() {
        return Err(Error::LengthMismatch(format!(
            "{} response samples vs {} cut-point samples",
            v_samples.len(),
            c_samples.len()
        )));
    }
    let dim = v_samples[0].len();
    let mut acc = vec![0.0; dim];
    for (v, c) in v_samples.iter().zip(c_samples) {
        for (a, &va) in v.iter().enumerate() {
            acc[a] += expected_level(va, c);
        }
    }
    let n = v_samples.len() as f64;
    Ok(acc.into_iter().map(|x| x / n).collect())
}

/// `sum_k k P(r = k | v, c)` for a single response.
pub fn expected_level(v: f64, c: &CutPoints) -> f64 {
    category_probabilities(v, c)
        .iter()
        .enumerate()
        .map(|(k, p)| (k + 1) as f64 * p)
        .sum()
}
