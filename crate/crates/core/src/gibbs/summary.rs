use nalgebra::{DMatrix, DVector};

use super::{PosteriorSamples, Snapshot};
use crate::error::{Error, Result};

/// Per-snapshot relabelling of groups onto the end-of-burn-in reference.
///
/// `maps[t][g]` is the reference label of group `g` in snapshot `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelAlignment {
    pub maps: Vec<Vec<usize>>,
}

/// Greedy matching: repeatedly pair the closest unmatched (sample, reference)
/// groups by squared Euclidean distance.
fn greedy_match(sample: &[DVector<f64>], reference: &[DVector<f64>]) -> Vec<usize> {
    let g = sample.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(g * g);
    for (a, x) in sample.iter().enumerate() {
        for (b, y) in reference.iter().enumerate() {
            pairs.push(((x - y).norm_squared(), a, b));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut map = vec![usize::MAX; g];
    let mut taken = vec![false; reference.len()];
    for (_, a, b) in pairs {
        if map[a] == usize::MAX && !taken[b] {
            map[a] = b;
            taken[b] = true;
        }
    }
    map
}

impl PosteriorSamples {
    fn ensure_samples(&self) -> Result<()> {
        if self.states.is_empty() {
            Err(Error::EmptySamples)
        } else {
            Ok(())
        }
    }

    pub fn num_groups(&self) -> usize {
        self.reference_m.len()
    }

    pub fn align_labels(&self) -> LabelAlignment {
        LabelAlignment {
            maps: self
                .states
                .iter()
                .map(|s| greedy_match(&s.m, &self.reference_m))
                .collect(),
        }
    }

    /// Posterior mean of each group's bias after label alignment.
    pub fn mean_group_bias(&self) -> Result<Vec<DVector<f64>>> {
        self.ensure_samples()?;
        let align = self.align_labels();
        let a = self.num_aspects();
        let mut acc = vec![DVector::zeros(a); self.num_groups()];
        for (snap, map) in self.states.iter().zip(&align.maps) {
            for (g, m) in snap.m.iter().enumerate() {
                acc[map[g]] += m;
            }
        }
        let n = self.states.len() as f64;
        Ok(acc.into_iter().map(|x| x / n).collect())
    }

    /// Most frequent aligned group of each user.
    pub fn modal_groups(&self) -> Result<Vec<usize>> {
        self.ensure_samples()?;
        let align = self.align_labels();
        let users = self.states[0].s.len();
        let mut votes = vec![vec![0usize; self.num_groups()]; users];
        for (snap, map) in self.states.iter().zip(&align.maps) {
            for (j, &g) in snap.s.iter().enumerate() {
                votes[j][map[g]] += 1;
            }
        }
        Ok(votes
            .iter()
            .map(|v| (0..v.len()).max_by_key(|&g| (v[g], usize::MAX - g)).unwrap_or(0))
            .collect())
    }

    /// Posterior mean bias each user carries: average of `m_{s_j}`.
    pub fn mean_user_bias(&self) -> Result<Vec<DVector<f64>>> {
        self.ensure_samples()?;
        let users = self.states[0].s.len();
        let mut acc = vec![DVector::zeros(self.num_aspects()); users];
        for snap in &self.states {
            for (j, &g) in snap.s.iter().enumerate() {
                acc[j] += &snap.m[g];
            }
        }
        let n = self.states.len() as f64;
        Ok(acc.into_iter().map(|x| x / n).collect())
    }

    pub fn mean_intrinsic(&self) -> Result<Vec<DVector<f64>>> {
        self.ensure_samples()?;
        let items = self.states[0].z.len();
        let mut acc = vec![DVector::zeros(self.num_aspects()); items];
        for snap in &self.states {
            for (x, z) in acc.iter_mut().zip(&snap.z) {
                *x += z;
            }
        }
        let n = self.states.len() as f64;
        Ok(acc.into_iter().map(|x| x / n).collect())
    }

    pub fn mean_cutpoints(&self) -> Result<Vec<f64>> {
        self.ensure_samples()?;
        let mut acc = vec![0.0; self.num_levels - 1];
        for snap in &self.states {
            for (x, c) in acc.iter_mut().zip(snap.c.as_slice()) {
                *x += c;
            }
        }
        let n = self.states.len() as f64;
        Ok(acc.into_iter().map(|x| x / n).collect())
    }

    pub fn mean_population(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.ensure_samples()?;
        let a = self.num_aspects();
        let mut mu = DVector::zeros(a);
        let mut sigma = DMatrix::zeros(a, a);
        for snap in &self.states {
            mu += &snap.mu;
            sigma += &snap.sigma;
        }
        let n = self.states.len() as f64;
        Ok((mu / n, sigma / n))
    }

    /// Intrinsic quality mapped to the rating scale. Only `z + m` is
    /// identified, so each snapshot anchors `z_i` at the user-weighted mean
    /// group bias before taking the expected level under its cut-points.
    /// Continuous variants return the anchored posterior mean.
    pub fn intrinsic_rating(&self, item: usize) -> Result<Vec<f64>> {
        self.ensure_samples()?;
        let a = self.num_aspects();
        let mut acc = vec![0.0; a];
        for snap in &self.states {
            let z = snap.z.get(item).ok_or_else(|| Error::IndexOutOfRange {
                index: item,
                range: format!("0..{}", snap.z.len()),
            })?;
            let anchored = z + population_bias(snap, a);
            for (x, &va) in acc.iter_mut().zip(anchored.iter()) {
                *x += if self.kind.ordinal_link {
                    crate::stick_breaking::expected_level(va, &snap.c)
                } else {
                    va
                };
            }
        }
        let n = self.states.len() as f64;
        Ok(acc.into_iter().map(|x| x / n).collect())
    }
}

/// Group bias averaged over users.
fn population_bias(snap: &Snapshot, num_aspects: usize) -> DVector<f64> {
    let mut total = DVector::zeros(num_aspects);
    for &g in &snap.s {
        total += &snap.m[g];
    }
    if !snap.s.is_empty() {
        total /= snap.s.len() as f64;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn greedy_match_recovers_permutation() {
        let reference = vec![dv(&[0.0, 0.0]), dv(&[3.0, 0.0]), dv(&[0.0, 3.0])];
        let sample = vec![dv(&[0.1, 2.9]), dv(&[0.2, -0.1]), dv(&[2.8, 0.3])];
        assert_eq!(greedy_match(&sample, &reference), vec![2, 0, 1]);
    }

    #[test]
    fn greedy_match_is_a_bijection_under_ties() {
        let reference = vec![dv(&[0.0]), dv(&[0.0])];
        let sample = vec![dv(&[0.0]), dv(&[0.0])];
        let mut m = greedy_match(&sample, &reference);
        m.sort();
        assert_eq!(m, vec![0, 1]);
    }
}
