//! Gibbs sampling for the ordinal aspect-bias model.
//!
//! One sweep updates, in order: group bias offsets, user groups (with the
//! group proportions integrated out), the NIW mean/covariance of intrinsic
//! quality, intrinsic quality, the Pólya-Gamma auxiliaries together with the
//! latent responses, optionally groups, biases and intrinsic quality again
//! with the response noise held fixed, and the cut-points.
//!
//! Randomness comes from per-block substreams (see [`crate::rng`]), so a run
//! is bitwise reproducible whether blocks execute serially or on the rayon
//! pool.

mod ancillary;
mod conditionals;
pub mod cutpoints;
mod density;
mod predict;
mod summary;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, BiasMode};
use crate::config::{Hyperparameters, RunConfig};
use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Niw};
use crate::rng::{substream, Phase};
use crate::stick_breaking::CutPoints;

pub use predict::{ColdStart, Prediction};
pub use summary::LabelAlignment;

/// A sampler error with the state of the sweep that raised it.
#[derive(Debug)]
pub struct SamplerFailure {
    pub error: Error,
    pub state: Box<LatentState>,
}

/// One Gibbs snapshot of every latent variable.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    /// Intrinsic quality per item.
    pub z: Vec<DVector<f64>>,
    /// Bias offset per group.
    pub m: Vec<DVector<f64>>,
    /// Group of each user.
    pub s: Vec<usize>,
    /// Latent continuous response per observation.
    pub v: Vec<DVector<f64>>,
    /// Pólya-Gamma auxiliaries per observation, laid out `a * (K - 1) + (k - 1)`;
    /// zero where the stick does not contribute. Empty for continuous variants.
    pub omega: Vec<Vec<f64>>,
    pub c: CutPoints,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Users per group.
    pub group_counts: Vec<usize>,
    /// Number of completed sweeps; keys the random substreams.
    pub sweep: u64,
}

impl LatentState {
    pub fn num_groups(&self) -> usize {
        self.m.len()
    }

    /// Checks the structural invariants: group counts match assignments,
    /// cut-points are increasing, `Sigma` is SPD and the auxiliaries are
    /// non-negative and zero exactly on non-contributing sticks.
    pub fn check_invariants(&self, data: &RatingsDataset) -> std::result::Result<(), String> {
        let mut counts = vec![0usize; self.m.len()];
        for &g in &self.s {
            if g >= counts.len() {
                return Err(format!("group {g} out of range"));
            }
            counts[g] += 1;
        }
        if counts != self.group_counts {
            return Err("group counts disagree with assignments".into());
        }
        if self.group_counts.iter().sum::<usize>() != data.num_users() {
            return Err("group counts do not sum to the number of users".into());
        }
        if self.c.as_slice().windows(2).any(|w| w[0] >= w[1]) {
            return Err("cut-points not strictly increasing".into());
        }
        if !linalg::is_spd(&self.sigma) {
            return Err("Sigma not SPD".into());
        }
        let km1 = self.c.as_slice().len();
        for (obs, w) in data.observations().iter().zip(&self.omega) {
            for (a, &r) in obs.ratings.iter().enumerate() {
                for k in 1..=km1 {
                    let x = w[a * km1 + k - 1];
                    let contributes = k <= r as usize;
                    if x < 0.0 || (contributes != (x > 0.0)) {
                        return Err(format!("omega pattern broken at aspect {a}, stick {k}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The retained part of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sweep: u64,
    #[serde(with = "vec_of_vectors")]
    pub z: Vec<DVector<f64>>,
    #[serde(with = "vec_of_vectors")]
    pub m: Vec<DVector<f64>>,
    pub s: Vec<usize>,
    pub c: CutPoints,
    #[serde(with = "crate::config::vector_list")]
    pub mu: DVector<f64>,
    #[serde(with = "crate::config::matrix_rows")]
    pub sigma: DMatrix<f64>,
    #[serde(skip)]
    pub v: Option<Vec<DVector<f64>>>,
}

impl Snapshot {
    pub fn of(state: &LatentState, keep_latent: bool) -> Self {
        Self {
            sweep: state.sweep,
            z: state.z.clone(),
            m: state.m.clone(),
            s: state.s.clone(),
            c: state.c.clone(),
            mu: state.mu.clone(),
            sigma: state.sigma.clone(),
            v: keep_latent.then(|| state.v.clone()),
        }
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m.len()];
        for &g in &self.s {
            counts[g] += 1;
        }
        counts
    }
}

/// Thinned chain of snapshots with the per-sweep joint log-density trace.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub kind: BaselineKind,
    /// Hyperparameters the chain ran with (single group for the global and
    /// no-bias variants).
    pub hyperparameters: Hyperparameters,
    pub num_levels: usize,
    pub seed: u64,
    pub predict_draws: usize,
    pub states: Vec<Snapshot>,
    /// Joint log-density after every sweep, burn-in included.
    pub sweep_log: Vec<f64>,
    /// Group biases at the end of burn-in, the label-alignment reference.
    pub reference_m: Vec<DVector<f64>>,
}

/// Sampler bound to one dataset, variant and configuration.
pub struct Sampler<'a> {
    pub(crate) data: &'a RatingsDataset,
    pub(crate) hp: Hyperparameters,
    pub(crate) cfg: RunConfig,
    pub(crate) kind: BaselineKind,
    pub(crate) b_prec: DMatrix<f64>,
    pub(crate) lambda_prec: DMatrix<f64>,
}

impl<'a> Sampler<'a> {
    /// Validates inputs and precomputes the fixed precisions.
    pub fn new(
        data: &'a RatingsDataset,
        hp: &Hyperparameters,
        cfg: &RunConfig,
        kind: BaselineKind,
    ) -> Result<Self> {
        let hp = kind.effective_hyperparameters(hp);
        hp.validate(data.num_aspects())?;
        cfg.validate(data.num_levels())?;
        let b_prec = linalg::spd_inverse(&hp.response_cov, "response covariance")?;
        let lambda_prec = linalg::spd_inverse(&hp.lambda, "bias prior covariance")?;
        Ok(Self {
            data,
            hp,
            cfg: cfg.clone(),
            kind,
            b_prec,
            lambda_prec,
        })
    }

    /// Full-model sampler.
    pub fn full(data: &'a RatingsDataset, hp: &Hyperparameters, cfg: &RunConfig) -> Result<Self> {
        Self::new(data, hp, cfg, BaselineKind::FULL)
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub(crate) fn rng(&self, sweep: u64, phase: Phase, block: u64) -> crate::rng::SamplerRng {
        substream(self.cfg.seed, sweep, phase, block)
    }

    pub(crate) fn niw_prior(&self) -> Niw {
        Niw {
            mu: self.hp.niw_mu0.clone(),
            kappa: self.hp.niw_kappa0,
            nu: self.hp.niw_nu0,
            psi: self.hp.niw_psi0.clone(),
        }
    }

    /// Runs `f` over `0..n`, on the rayon pool when parallel blocks are on.
    pub(crate) fn map_blocks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.cfg.parallel_blocks {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }

    /// Starting state: uniform groups, zero biases, intrinsic quality at the
    /// NIW prior mean, responses at the centre of their observed level's
    /// threshold cell, auxiliaries drawn once given those responses.
    pub fn init_state(&self) -> Result<LatentState> {
        let data = self.data;
        let a = data.num_aspects();
        let g = self.hp.num_groups;
        let mut rng = self.rng(0, Phase::Init, 0);
        let s: Vec<usize> = match self.kind.bias_mode {
            BiasMode::Group if g > 1 => (0..data.num_users())
                .map(|_| rand::Rng::random_range(&mut rng, 0..g))
                .collect(),
            _ => vec![0; data.num_users()],
        };
        let mut group_counts = vec![0; g];
        for &gj in &s {
            group_counts[gj] += 1;
        }
        let c = CutPoints::new(self.cfg.init_cutpoints.clone())?;
        let spread = (self.hp.niw_nu0 - a as f64 - 1.0).max(1.0);
        let mut state = LatentState {
            z: vec![self.hp.niw_mu0.clone(); data.num_items()],
            m: vec![DVector::zeros(a); g],
            s,
            v: Vec::new(),
            omega: Vec::new(),
            c,
            mu: self.hp.niw_mu0.clone(),
            sigma: &self.hp.niw_psi0 / spread,
            group_counts,
            sweep: 0,
        };
        if self.kind.ordinal_link {
            state.v = data
                .observations()
                .iter()
                .map(|o| {
                    DVector::from_iterator(
                        a,
                        o.ratings.iter().map(|&r| initial_response(&state.c, r as usize)),
                    )
                })
                .collect();
            state.omega = self.map_blocks(data.len(), |n| {
                let mut rng = self.rng(0, Phase::Init, 1 + n as u64);
                self.draw_omega(&state, n, &mut rng)
            });
        } else {
            state.v = continuous_responses(data);
        }
        Ok(state)
    }

    /// State assembled from given values; group counts and auxiliaries are
    /// derived. For continuous variants `v` is replaced by the ratings.
    #[allow(clippy::too_many_arguments)]
    pub fn state_from_parts(
        &self,
        z: Vec<DVector<f64>>,
        m: Vec<DVector<f64>>,
        s: Vec<usize>,
        v: Vec<DVector<f64>>,
        c: CutPoints,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        sweep: u64,
    ) -> Result<LatentState> {
        let mut group_counts = vec![0; m.len()];
        for &g in &s {
            group_counts[g] += 1;
        }
        let mut state = LatentState {
            z,
            m,
            s,
            v,
            omega: Vec::new(),
            c,
            mu,
            sigma,
            group_counts,
            sweep,
        };
        if self.kind.ordinal_link {
            state.omega = self.map_blocks(self.data.len(), |n| {
                let mut rng = self.rng(sweep, Phase::Init, 1 + n as u64);
                self.draw_omega(&state, n, &mut rng)
            });
        } else {
            state.v = continuous_responses(self.data);
        }
        Ok(state)
    }

    /// One full scan. Increments `state.sweep` first so every sweep owns a
    /// fresh set of substreams.
    pub fn sweep(&self, state: &mut LatentState) -> Result<()> {
        state.sweep += 1;
        if self.kind.bias_mode != BiasMode::None {
            self.sample_group_bias(state)?;
        }
        if self.kind.bias_mode == BiasMode::Group {
            self.sample_user_groups(state);
        }
        self.sample_niw(state)?;
        self.sample_intrinsic(state)?;
        if self.kind.ordinal_link {
            self.sample_latent_responses(state)?;
            if self.cfg.ancillary_updates {
                if self.kind.bias_mode == BiasMode::Group {
                    self.sample_ancillary_groups(state);
                }
                if self.kind.bias_mode != BiasMode::None {
                    self.sample_ancillary_bias(state)?;
                }
                self.sample_ancillary_intrinsic(state)?;
            }
            if self.cfg.update_cutpoints {
                self.sample_cutpoints(state);
            }
        }
        Ok(())
    }

    /// Burn-in, then `num_samples` snapshots every `thinning` sweeps.
    pub fn run(&self) -> Result<PosteriorSamples> {
        self.run_from(self.init_state()?)
    }

    /// As [`Sampler::run`], starting from a given state.
    pub fn run_from(&self, state: LatentState) -> Result<PosteriorSamples> {
        self.run_capturing(state).map_err(|f| f.error)
    }

    /// As [`Sampler::run_from`], but a failure hands back the state the
    /// failing sweep started from.
    pub fn run_capturing(&self, mut state: LatentState) -> std::result::Result<PosteriorSamples, SamplerFailure> {
        let total = self.cfg.burn_in + self.cfg.num_samples * self.cfg.thinning;
        let mut sweep_log = Vec::with_capacity(total);
        let mut states = Vec::with_capacity(self.cfg.num_samples);
        let step = |state: &mut LatentState, log: &mut Vec<f64>| {
            let before = state.clone();
            match self.sweep(state).and_then(|()| self.joint_log_density(state)) {
                Ok(lp) => {
                    log.push(lp);
                    Ok(())
                }
                Err(error) => Err(SamplerFailure {
                    error,
                    state: Box::new(before),
                }),
            }
        };
        for _ in 0..self.cfg.burn_in {
            step(&mut state, &mut sweep_log)?;
        }
        let reference_m = state.m.clone();
        for t in 1..=self.cfg.num_samples * self.cfg.thinning {
            step(&mut state, &mut sweep_log)?;
            if t % self.cfg.thinning == 0 {
                states.push(Snapshot::of(&state, self.cfg.keep_latent));
            }
        }
        Ok(PosteriorSamples {
            kind: self.kind,
            hyperparameters: self.hp.clone(),
            num_levels: self.data.num_levels(),
            seed: self.cfg.seed,
            predict_draws: self.cfg.predict_draws,
            states,
            sweep_log,
            reference_m,
        })
    }
}

/// Centre of the threshold cell of level `r`, with the open outer cells
/// clipped at `max(|c_1|, |c_{K-1}|) + 5`.
fn initial_response(c: &CutPoints, r: usize) -> f64 {
    let cs = c.as_slice();
    if cs.is_empty() {
        return 0.0;
    }
    let bound = cs[0].abs().max(cs[cs.len() - 1].abs()) + 5.0;
    let (lo, hi) = c.cell(r);
    let (lo, hi) = (lo.max(-bound), hi.min(bound));
    if lo < hi {
        return 0.5 * (lo + hi);
    }
    // Empty cell (cut-points closer than ln 2): fall back to the raw
    // cut-point bracket.
    let lo = if r >= 2 { cs[r - 2] } else { -bound };
    let hi = if r <= cs.len() { cs[r - 1] } else { bound };
    0.5 * (lo + hi)
}

fn continuous_responses(data: &RatingsDataset) -> Vec<DVector<f64>> {
    data.observations()
        .iter()
        .map(|o| DVector::from_iterator(o.ratings.len(), o.ratings.iter().map(|&r| r as f64)))
        .collect()
}

/// Fits the full ordinal group-bias model.
pub fn fit(data: &RatingsDataset, hp: &Hyperparameters, cfg: &RunConfig) -> Result<PosteriorSamples> {
    fit_kind(BaselineKind::FULL, data, hp, cfg)
}

/// Fits any of the model variants.
pub fn fit_kind(
    kind: BaselineKind,
    data: &RatingsDataset,
    hp: &Hyperparameters,
    cfg: &RunConfig,
) -> Result<PosteriorSamples> {
    Sampler::new(data, hp, cfg, kind)?.run()
}

pub(crate) mod vec_of_vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}
