//! Uniform ranges for the cut-point update.
//!
//! Level `r` owns the threshold cell `(t_{r-1}, t_r]` where
//! `t_k = c_k - ln(1 - e^{-(c_{k+1} - c_k)})` and `t_{K-1} = c_{K-1}`.
//! Moving `c_k` shifts `t_k` up (and `t_{k-1}` down), so each response
//! that currently sits in its observed level's cell turns into a one-sided
//! bound on `c_k`. The lemma-consistent range is the intersection of those
//! bounds, which always contains the current value.

use crate::stick_breaking::{category_probabilities, gap_offset, softplus, CutPoints};

/// Fraction of the neighbouring gap used as padding when one side of the
/// range has no supporting responses.
pub const FALLBACK_PAD: f64 = 0.1;

/// Smallest and largest value seen for one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelExtremes {
    pub min: f64,
    pub max: f64,
}

impl Default for LevelExtremes {
    fn default() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl LevelExtremes {
    pub fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn is_empty(&self) -> bool {
        self.min > self.max
    }

    fn min_opt(&self) -> Option<f64> {
        (!self.is_empty()).then_some(self.min)
    }

    fn max_opt(&self) -> Option<f64> {
        (!self.is_empty()).then_some(self.max)
    }
}

/// Most probable 1-based level for response `v`.
pub fn argmax_level(v: f64, c: &CutPoints) -> usize {
    category_probabilities(v, c)
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k + 1)
        .unwrap_or(1)
}

struct Neighbours {
    current: f64,
    below: Option<f64>,
    above: Option<f64>,
    /// The outermost level on each side has ratings, so an outer cut-point
    /// must not wander away from them.
    anchored_below: bool,
    anchored_above: bool,
}

impl Neighbours {
    fn of(c: &CutPoints, k: usize, occupied: &[bool]) -> Self {
        let cs = c.as_slice();
        Self {
            current: cs[k - 1],
            below: (k >= 2).then(|| cs[k - 2]),
            above: (k < cs.len()).then(|| cs[k]),
            anchored_below: occupied[k - 1],
            anchored_above: occupied[k],
        }
    }

    fn padded_floor(&self) -> Option<f64> {
        self.below.map(|b| b + FALLBACK_PAD * (self.current - b))
    }

    fn padded_ceiling(&self) -> Option<f64> {
        self.above.map(|a| a - FALLBACK_PAD * (a - self.current))
    }

    /// Lower end used when no response bounds `c_k` from below. For `c_1`
    /// this stays at the current value while level 1 has ratings; otherwise
    /// the step is one neighbouring gap.
    fn fallback_lo(&self) -> f64 {
        self.padded_floor().unwrap_or_else(|| {
            if self.anchored_below {
                self.current
            } else {
                self.current - self.above.map(|a| a - self.current).unwrap_or(1.0)
            }
        })
    }

    fn fallback_hi(&self) -> f64 {
        self.padded_ceiling().unwrap_or_else(|| {
            if self.anchored_above {
                self.current
            } else {
                self.current + self.below.map(|b| self.current - b).unwrap_or(1.0)
            }
        })
    }

    fn close(&self, lo: Option<f64>, hi: Option<f64>) -> (f64, f64) {
        let lo = match lo {
            Some(x) => self.padded_floor().map_or(x, |f| x.max(f)),
            None => self.fallback_lo(),
        };
        let hi = match hi {
            Some(x) => self.padded_ceiling().map_or(x, |f| x.min(f)),
            None => self.fallback_hi(),
        };
        (lo, hi)
    }
}

/// Range for `c_k` (1-based) that keeps every placed response in its cell.
///
/// `placed[r - 1]` holds the extremes of the responses with observed level
/// `r` that lie in cell `r` under the current cut-points; `occupied[r - 1]`
/// says whether level `r` was observed at all.
pub fn lemma_interval(
    c: &CutPoints,
    k: usize,
    placed: &[LevelExtremes],
    occupied: &[bool],
) -> (f64, f64) {
    let nb = Neighbours::of(c, k, occupied);
    let mut lower: Option<f64> = None;
    let mut upper: Option<f64> = None;
    let mut raise = |x: f64| lower = Some(lower.map_or(x, |l: f64| l.max(x)));
    let mut cap = |x: f64| upper = Some(upper.map_or(x, |u: f64| u.min(x)));

    // t_k as a function of c_k, and its inverse.
    let t_k_inverse = |y: f64| match nb.above {
        Some(a) => y - softplus(y - a),
        None => y,
    };

    // Level k must stay at or below t_k.
    if let Some(max_k) = placed[k - 1].max_opt() {
        raise(t_k_inverse(max_k));
    }
    // Level k + 1 must stay above t_k.
    if let Some(min_next) = placed[k].min_opt() {
        cap(t_k_inverse(min_next));
    }
    if let Some(b) = nb.below {
        // t_{k-1} = c_{k-1} + gap_offset(c_k - c_{k-1}) falls as c_k rises.
        if let Some(min_k) = placed[k - 1].min_opt() {
            if min_k > b {
                raise(b + gap_offset(min_k - b));
            }
        }
        if let Some(max_prev) = placed[k - 2].max_opt() {
            if max_prev > b {
                cap(b + gap_offset(max_prev - b));
            }
        }
    }
    nb.close(lower, upper)
}

/// Argmax-based range `[max{v : argmax = k} + o, min{v : argmax = k + 1} + o]`
/// with `o = -ln(1 - e^{-(c_k - c_{k-1})})` (zero for `k = 1`).
///
/// `by_argmax[r - 1]` holds extremes of responses whose most probable level
/// is `r`.
pub fn literal_interval(
    c: &CutPoints,
    k: usize,
    by_argmax: &[LevelExtremes],
    occupied: &[bool],
) -> (f64, f64) {
    let nb = Neighbours::of(c, k, occupied);
    let offset = nb.below.map_or(0.0, |b| gap_offset(nb.current - b));
    let lo = by_argmax[k - 1].max_opt().map(|x| x + offset);
    let hi = by_argmax[k].min_opt().map(|x| x + offset);
    nb.close(lo, hi)
}
