//! Updates in the noise parameterisation `e = v - z_i - m_{s_j}`.
//!
//! With `B` small against the logistic scale of the ordinal likelihood, the
//! latent responses track `z + m` closely and the centred conditionals move
//! groups, biases and intrinsic quality only slowly. Holding `e` fixed
//! instead, each of these has an exact conditional given the ratings (groups)
//! or given fresh Pólya-Gamma auxiliaries (biases, intrinsic quality); `v`
//! is then shifted by the change. Alternating both parameterisations leaves
//! the joint posterior invariant.

use nalgebra::{DMatrix, DVector};

use super::{LatentState, Sampler};
use crate::error::Result;
use crate::linalg;
use crate::rng::{sample_categorical, Phase};
use crate::stick_breaking::{log_likelihood_vector, stick_kappa};

impl Sampler<'_> {
    /// Group probabilities of user `j` with its noise held fixed, using the
    /// ordinal likelihood directly and leave-one-out group counts.
    pub fn ancillary_group_probabilities(&self, state: &LatentState, j: usize) -> Vec<f64> {
        let mut counts = state.group_counts.clone();
        counts[state.s[j]] -= 1;
        self.ancillary_group_scores(state, j, &counts)
    }

    fn ancillary_group_scores(&self, state: &LatentState, j: usize, counts: &[usize]) -> Vec<f64> {
        let old = &state.m[state.s[j]];
        let obs = self.data.user_observations(j);
        let log_scores: Vec<f64> = state
            .m
            .iter()
            .enumerate()
            .map(|(g, m)| {
                let shift = m - old;
                let loglik: f64 = obs
                    .iter()
                    .map(|&n| {
                        let v = &state.v[n] + &shift;
                        log_likelihood_vector(&self.data.observations()[n].ratings, v.as_slice(), &state.c)
                    })
                    .sum();
                (counts[g] as f64 + self.hp.alpha[g]).ln() + loglik
            })
            .collect();
        super::conditionals::normalize_log(&log_scores)
    }

    pub fn sample_ancillary_groups(&self, state: &mut LatentState) {
        let mut rng = self.rng(state.sweep, Phase::AncillaryGroups, 0);
        for j in 0..self.data.num_users() {
            let old = state.s[j];
            state.group_counts[old] -= 1;
            let probs = self.ancillary_group_scores(state, j, &state.group_counts);
            let new = sample_categorical(&probs, &mut rng);
            if new != old {
                let shift = &state.m[new] - &state.m[old];
                for &n in self.data.user_observations(j) {
                    state.v[n] += &shift;
                }
                state.s[j] = new;
            }
            state.group_counts[new] += 1;
        }
    }

    /// Refreshes every observation's auxiliaries given the current responses.
    pub(super) fn refresh_omega(&self, state: &mut LatentState, phase: Phase) {
        let sweep = state.sweep;
        let st = &*state;
        state.omega = self.map_blocks(self.data.len(), |n| {
            let mut rng = self.rng(sweep, phase, n as u64);
            self.draw_omega(st, n, &mut rng)
        });
    }

    /// Adds the augmented-likelihood terms of observation `n` for a shift
    /// of its latent mean: precision gains `sum_k omega_k` and the
    /// information `sum_k (omega_k (c_k - v + x) - kappa_k)` where `x` is the
    /// component being resampled.
    fn add_augmented_terms(
        &self,
        state: &LatentState,
        n: usize,
        current: &DVector<f64>,
        precision: &mut DMatrix<f64>,
        info: &mut DVector<f64>,
    ) {
        let obs = &self.data.observations()[n];
        let cs = state.c.as_slice();
        let km1 = cs.len();
        let omega = &state.omega[n];
        for (a, &r) in obs.ratings.iter().enumerate() {
            let base = state.v[n][a] - current[a];
            for k in 1..=km1 {
                if let Some(kappa) = stick_kappa(r as usize, k) {
                    let w = omega[a * km1 + k - 1];
                    precision[(a, a)] += w;
                    info[a] += w * (cs[k - 1] - base) - kappa;
                }
            }
        }
    }

    /// Precision and information of `m_g` given the noise and auxiliaries.
    pub fn ancillary_bias_posterior(&self, state: &LatentState, g: usize) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.data.num_aspects();
        let mut precision = self.lambda_prec.clone();
        let mut info = DVector::zeros(a);
        for (n, obs) in self.data.observations().iter().enumerate() {
            if state.s[obs.user] == g {
                self.add_augmented_terms(state, n, &state.m[g], &mut precision, &mut info);
            }
        }
        (precision, info)
    }

    pub fn sample_ancillary_bias(&self, state: &mut LatentState) -> Result<()> {
        self.refresh_omega(state, Phase::AncillaryBias);
        let sweep = state.sweep;
        let offset = self.data.len() as u64;
        let st = &*state;
        let draws = self.map_blocks(st.m.len(), |g| {
            let (p, h) = self.ancillary_bias_posterior(st, g);
            let mut rng = self.rng(sweep, Phase::AncillaryBias, offset + g as u64);
            linalg::sample_canonical(&p, &h, "ancillary bias posterior", &mut rng)
        });
        let new_m: Vec<DVector<f64>> = draws.into_iter().collect::<Result<_>>()?;
        let shifts: Vec<DVector<f64>> = new_m.iter().zip(&state.m).map(|(x, y)| x - y).collect();
        for (n, obs) in self.data.observations().iter().enumerate() {
            state.v[n] += &shifts[state.s[obs.user]];
        }
        state.m = new_m;
        Ok(())
    }

    /// Precision and information of `z_i` given the noise and auxiliaries.
    pub fn ancillary_intrinsic_posterior(
        &self,
        state: &LatentState,
        sigma_prec: &DMatrix<f64>,
        i: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut precision = sigma_prec.clone();
        let mut info = sigma_prec * &state.mu;
        for &n in self.data.item_observations(i) {
            self.add_augmented_terms(state, n, &state.z[i], &mut precision, &mut info);
        }
        (precision, info)
    }

    pub fn sample_ancillary_intrinsic(&self, state: &mut LatentState) -> Result<()> {
        self.refresh_omega(state, Phase::AncillaryIntrinsic);
        let sigma_prec = linalg::spd_inverse(&state.sigma, "intrinsic covariance")?;
        let sweep = state.sweep;
        let offset = self.data.len() as u64;
        let st = &*state;
        let draws = self.map_blocks(self.data.num_items(), |i| {
            let (p, h) = self.ancillary_intrinsic_posterior(st, &sigma_prec, i);
            let mut rng = self.rng(sweep, Phase::AncillaryIntrinsic, offset + i as u64);
            linalg::sample_canonical(&p, &h, "ancillary intrinsic posterior", &mut rng)
        });
        let new_z: Vec<DVector<f64>> = draws.into_iter().collect::<Result<_>>()?;
        for (n, obs) in self.data.observations().iter().enumerate() {
            state.v[n] += &new_z[obs.item] - &state.z[obs.item];
        }
        state.z = new_z;
        Ok(())
    }
}
