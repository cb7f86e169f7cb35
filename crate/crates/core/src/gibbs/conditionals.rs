use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::cutpoints::{self, LevelExtremes};
use super::{LatentState, Sampler};
use crate::config::CutpointRule;
use crate::error::Result;
use crate::linalg;
use crate::polya_gamma::sample_pg1;
use crate::rng::{sample_categorical, Phase, SamplerRng};
use crate::stick_breaking::{stick_kappa, CutPoints};

impl Sampler<'_> {
    /// Per-group sums of `v_ij - z_i` and rating counts.
    fn group_residuals(&self, state: &LatentState) -> (Vec<DVector<f64>>, Vec<usize>) {
        let a = self.data.num_aspects();
        let g = state.m.len();
        let mut sums = vec![DVector::zeros(a); g];
        let mut counts = vec![0usize; g];
        for (obs, v) in self.data.observations().iter().zip(&state.v) {
            let grp = state.s[obs.user];
            sums[grp] += v - &state.z[obs.item];
            counts[grp] += 1;
        }
        (sums, counts)
    }

    /// Precision and information vector of the full conditional of `m_g`.
    pub fn group_bias_posterior(&self, state: &LatentState) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let (sums, counts) = self.group_residuals(state);
        sums.into_iter()
            .zip(counts)
            .map(|(sum, n)| {
                let precision = &self.b_prec * n as f64 + &self.lambda_prec;
                let info = &self.b_prec * sum;
                (precision, info)
            })
            .collect()
    }

    /// `m_g ~ N(Lhat (B^{-1} sum (v - z)), Lhat)`, `Lhat = (n_g B^{-1} + Lambda^{-1})^{-1}`.
    pub fn sample_group_bias(&self, state: &mut LatentState) -> Result<()> {
        let posts = self.group_bias_posterior(state);
        let sweep = state.sweep;
        let draws = self.map_blocks(posts.len(), |g| {
            let mut rng = self.rng(sweep, Phase::GroupBias, g as u64);
            linalg::sample_canonical(&posts[g].0, &posts[g].1, "group bias posterior", &mut rng)
        });
        state.m = draws.into_iter().collect::<Result<_>>()?;
        Ok(())
    }

    /// Normalized full-conditional group probabilities of user `j`, with
    /// `j` removed from the group counts.
    pub fn group_probabilities(&self, state: &LatentState, j: usize) -> Vec<f64> {
        let weighted: Vec<DVector<f64>> = state.m.iter().map(|m| &self.b_prec * m).collect();
        let quad: Vec<f64> = state.m.iter().zip(&weighted).map(|(m, w)| m.dot(w)).collect();
        let mut counts = state.group_counts.clone();
        counts[state.s[j]] -= 1;
        self.group_scores(state, j, &counts, &weighted, &quad)
    }

    fn group_scores(
        &self,
        state: &LatentState,
        j: usize,
        counts_without_j: &[usize],
        weighted: &[DVector<f64>],
        quad: &[f64],
    ) -> Vec<f64> {
        let a = self.data.num_aspects();
        let obs = self.data.user_observations(j);
        let mut resid = DVector::zeros(a);
        for &n in obs {
            resid += &state.v[n] - &state.z[self.data.observations()[n].item];
        }
        let nj = obs.len() as f64;
        let log_scores: Vec<f64> = (0..state.m.len())
            .map(|g| {
                (counts_without_j[g] as f64 + self.hp.alpha[g]).ln() + weighted[g].dot(&resid)
                    - 0.5 * nj * quad[g]
            })
            .collect();
        normalize_log(&log_scores)
    }

    /// Collapsed-Dirichlet update of every user's group, one user at a time.
    pub fn sample_user_groups(&self, state: &mut LatentState) {
        let weighted: Vec<DVector<f64>> = state.m.iter().map(|m| &self.b_prec * m).collect();
        let quad: Vec<f64> = state.m.iter().zip(&weighted).map(|(m, w)| m.dot(w)).collect();
        let mut rng = self.rng(state.sweep, Phase::UserGroups, 0);
        for j in 0..self.data.num_users() {
            let old = state.s[j];
            state.group_counts[old] -= 1;
            let probs = self.group_scores(state, j, &state.group_counts, &weighted, &quad);
            let new = sample_categorical(&probs, &mut rng);
            state.s[j] = new;
            state.group_counts[new] += 1;
        }
    }

    /// `(mu, Sigma)` from the NIW posterior given the current intrinsic
    /// qualities.
    pub fn sample_niw(&self, state: &mut LatentState) -> Result<()> {
        let post = self.niw_prior().posterior(&state.z);
        let mut rng = self.rng(state.sweep, Phase::Niw, 0);
        let (mu, sigma) = post.sample(&mut rng)?;
        state.mu = mu;
        state.sigma = sigma;
        Ok(())
    }

    /// Precision and information vector of the full conditional of `z_i`.
    pub fn intrinsic_posterior(
        &self,
        state: &LatentState,
        sigma_prec: &DMatrix<f64>,
        i: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.data.num_aspects();
        let obs = self.data.item_observations(i);
        let mut sum = DVector::zeros(a);
        for &n in obs {
            let user = self.data.observations()[n].user;
            sum += &state.v[n] - &state.m[state.s[user]];
        }
        let precision = &self.b_prec * obs.len() as f64 + sigma_prec;
        let info = &self.b_prec * sum + sigma_prec * &state.mu;
        (precision, info)
    }

    /// `z_i ~ N(Shat (B^{-1} sum (v - m) + Sigma^{-1} mu), Shat)`,
    /// `Shat = (n_i B^{-1} + Sigma^{-1})^{-1}`.
    pub fn sample_intrinsic(&self, state: &mut LatentState) -> Result<()> {
        let sigma_prec = linalg::spd_inverse(&state.sigma, "intrinsic covariance")?;
        let sweep = state.sweep;
        let st = &*state;
        let draws = self.map_blocks(self.data.num_items(), |i| {
            let (p, h) = self.intrinsic_posterior(st, &sigma_prec, i);
            let mut rng = self.rng(sweep, Phase::Intrinsic, i as u64);
            linalg::sample_canonical(&p, &h, "intrinsic posterior", &mut rng)
        });
        state.z = draws.into_iter().collect::<Result<_>>()?;
        Ok(())
    }

    /// Draws `omega^k_{ija} ~ PG(1, c_k - v_{ija})` for contributing sticks.
    pub(crate) fn draw_omega(&self, state: &LatentState, n: usize, rng: &mut SamplerRng) -> Vec<f64> {
        let obs = &self.data.observations()[n];
        let cs = state.c.as_slice();
        let km1 = cs.len();
        let mut w = vec![0.0; obs.ratings.len() * km1];
        for (a, &r) in obs.ratings.iter().enumerate() {
            let va = state.v[n][a];
            for k in 1..=km1.min(r as usize) {
                w[a * km1 + k - 1] = sample_pg1(cs[k - 1] - va, rng);
            }
        }
        w
    }

    /// Precision `B^{-1} + sum_k Omega^k` and information vector
    /// `B^{-1}(z + m) + sum_k (omega^k c_k - kappa^k)` of the latent
    /// response of observation `n` given its auxiliaries.
    pub fn latent_posterior(
        &self,
        state: &LatentState,
        n: usize,
        omega: &[f64],
    ) -> (DMatrix<f64>, DVector<f64>) {
        let obs = &self.data.observations()[n];
        let mean = &state.z[obs.item] + &state.m[state.s[obs.user]];
        let mut precision = self.b_prec.clone();
        let mut info = &self.b_prec * mean;
        let cs = state.c.as_slice();
        let km1 = cs.len();
        for (a, &r) in obs.ratings.iter().enumerate() {
            for k in 1..=km1 {
                if let Some(kappa) = stick_kappa(r as usize, k) {
                    let w = omega[a * km1 + k - 1];
                    precision[(a, a)] += w;
                    info[a] += w * cs[k - 1] - kappa;
                }
            }
        }
        (precision, info)
    }

    /// Resamples the auxiliaries given the current responses, then the
    /// responses given the fresh auxiliaries.
    pub fn sample_latent_responses(&self, state: &mut LatentState) -> Result<()> {
        let sweep = state.sweep;
        let st = &*state;
        let draws = self.map_blocks(self.data.len(), |n| {
            let mut rng = self.rng(sweep, Phase::Latent, n as u64);
            let omega = self.draw_omega(st, n, &mut rng);
            let (p, h) = self.latent_posterior(st, n, &omega);
            linalg::sample_canonical(&p, &h, "latent response posterior", &mut rng)
                .map(|v| (v, omega))
        });
        for (n, d) in draws.into_iter().enumerate() {
            let (v, omega) = d?;
            state.v[n] = v;
            state.omega[n] = omega;
        }
        Ok(())
    }

    /// Uniform range for `c_k` under the configured rule, given the current
    /// state. `k` is 1-based.
    pub fn cutpoint_range(&self, state: &LatentState, k: usize) -> (f64, f64) {
        let occupied = self.occupied_levels();
        match self.cfg.cutpoint_rule {
            CutpointRule::LemmaConsistent => {
                let extremes = self.placed_extremes(state);
                cutpoints::lemma_interval(&state.c, k, &extremes, &occupied)
            }
            CutpointRule::Literal => {
                let extremes = self.argmax_extremes(state);
                cutpoints::literal_interval(&state.c, k, &extremes, &occupied)
            }
            CutpointRule::Augmented => {
                let cs = state.c.as_slice();
                let lo = if k >= 2 { cs[k - 2] } else { f64::NEG_INFINITY };
                let hi = if k < cs.len() { cs[k] } else { f64::INFINITY };
                (lo, hi)
            }
        }
    }

    /// Precision and information of `c_k` (1-based) given the responses and
    /// the auxiliaries of stick `k`, under the Gaussian cut-point prior.
    pub fn cutpoint_posterior(&self, state: &LatentState, k: usize) -> (f64, f64) {
        let km1 = state.c.as_slice().len();
        let mut precision = self.hp.cutpoint_prior_sd.powi(-2);
        let mut info = 0.0;
        for ((obs, v), omega) in self.data.observations().iter().zip(&state.v).zip(&state.omega) {
            for (a, &r) in obs.ratings.iter().enumerate() {
                if let Some(kappa) = stick_kappa(r as usize, k) {
                    let w = omega[a * km1 + k - 1];
                    precision += w;
                    info += w * v[a] + kappa;
                }
            }
        }
        (precision, info)
    }

    /// Whether each level appears among the ratings.
    pub(crate) fn occupied_levels(&self) -> Vec<bool> {
        let mut occupied = vec![false; self.data.num_levels()];
        for obs in self.data.observations() {
            for &r in &obs.ratings {
                occupied[r as usize - 1] = true;
            }
        }
        occupied
    }

    /// Per observed level, extremes of the responses that currently lie in
    /// the threshold cell of that level.
    pub(crate) fn placed_extremes(&self, state: &LatentState) -> Vec<LevelExtremes> {
        let mut ext = vec![LevelExtremes::default(); self.data.num_levels()];
        for (obs, v) in self.data.observations().iter().zip(&state.v) {
            for (&r, &va) in obs.ratings.iter().zip(v.iter()) {
                if state.c.in_cell(r as usize, va) {
                    ext[r as usize - 1].push(va);
                }
            }
        }
        ext
    }

    /// Per level, extremes of the responses whose most probable level it is.
    pub(crate) fn argmax_extremes(&self, state: &LatentState) -> Vec<LevelExtremes> {
        let mut ext = vec![LevelExtremes::default(); self.data.num_levels()];
        for v in &state.v {
            for &va in v.iter() {
                ext[cutpoints::argmax_level(va, &state.c) - 1].push(va);
            }
        }
        ext
    }

    /// Sequential uniform updates of `c_1, ..., c_{K-1}`, each using the
    /// freshest neighbours.
    pub fn sample_cutpoints(&self, state: &mut LatentState) {
        if self.cfg.cutpoint_rule == CutpointRule::Augmented {
            self.sample_augmented_cutpoints(state);
            return;
        }
        let mut rng = self.rng(state.sweep, Phase::Cutpoints, 0);
        let km1 = state.c.as_slice().len();
        for k in 1..=km1 {
            let (lo, hi) = self.cutpoint_range(state, k);
            let mut c = state.c.as_slice().to_vec();
            let current = c[k - 1];
            let proposal = if lo < hi { rng.random_range(lo..hi) } else { current };
            let below = if k >= 2 { c[k - 2] } else { f64::NEG_INFINITY };
            let above = if k < km1 { c[k] } else { f64::INFINITY };
            c[k - 1] = if proposal > below && proposal < above { proposal } else { current };
            state.c = CutPoints::from_vec_unchecked(c);
        }
    }
}

impl Sampler<'_> {
    /// Fresh auxiliaries given the current responses, then each `c_k` from
    /// its truncated Gaussian conditional in turn. Stick `k` only involves
    /// `c_k`, so one set of auxiliaries serves every `k`.
    fn sample_augmented_cutpoints(&self, state: &mut LatentState) {
        self.refresh_omega(state, Phase::Cutpoints);
        let mut rng = self.rng(state.sweep, Phase::Cutpoints, self.data.len() as u64);
        for k in 1..=state.c.as_slice().len() {
            let (precision, info) = self.cutpoint_posterior(state, k);
            let (lo, hi) = self.cutpoint_range(state, k);
            let sd = precision.sqrt().recip();
            let mut c = state.c.as_slice().to_vec();
            let draw = linalg::sample_truncated_normal(info / precision, sd, lo, hi, &mut rng);
            // Keep the order strict even when the draw lands on a bound.
            if draw > lo && draw < hi {
                c[k - 1] = draw;
            }
            state.c = CutPoints::from_vec_unchecked(c);
        }
    }
}

pub(super) fn normalize_log(log_scores: &[f64]) -> Vec<f64> {
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_scores.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}
