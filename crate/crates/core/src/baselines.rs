//! The simplified comparison variants.
//!
//! Each variant toggles two things on the full model: whether ratings go
//! through the stick-breaking ordinal layer or are treated as real-valued
//! Gaussian responses, and whether the bias term is absent, shared by every
//! user, or per latent group.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Hyperparameters, RunConfig};
use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::gibbs::{self, PosteriorSamples};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    /// Responses centred on the item's intrinsic quality only.
    None,
    /// A single bias vector shared by every user.
    Global,
    /// Per-group bias vectors with latent user groups.
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaselineKind {
    pub ordinal_link: bool,
    pub bias_mode: BiasMode,
}

impl BaselineKind {
    pub const FULL: Self = Self::new(true, BiasMode::Group);
    pub const CONTINUOUS_BIAS: Self = Self::new(false, BiasMode::Group);
    pub const ORDINAL_NO_BIAS: Self = Self::new(true, BiasMode::None);
    pub const CONTINUOUS_NO_BIAS: Self = Self::new(false, BiasMode::None);
    pub const ORDINAL_GLOBAL: Self = Self::new(true, BiasMode::Global);
    pub const CONTINUOUS_GLOBAL: Self = Self::new(false, BiasMode::Global);

    pub const ALL: [Self; 6] = [
        Self::FULL,
        Self::CONTINUOUS_BIAS,
        Self::ORDINAL_NO_BIAS,
        Self::CONTINUOUS_NO_BIAS,
        Self::ORDINAL_GLOBAL,
        Self::CONTINUOUS_GLOBAL,
    ];

    pub const fn new(ordinal_link: bool, bias_mode: BiasMode) -> Self {
        Self {
            ordinal_link,
            bias_mode,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.ordinal_link, self.bias_mode) {
            (true, BiasMode::Group) => "full",
            (false, BiasMode::Group) => "continuous-bias",
            (true, BiasMode::None) => "ordinal-no-bias",
            (false, BiasMode::None) => "continuous-no-bias",
            (true, BiasMode::Global) => "ordinal-global",
            (false, BiasMode::Global) => "continuous-global",
        }
    }

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }

    pub(crate) fn code(&self) -> u8 {
        Self::ALL.iter().position(|k| k == self).unwrap() as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Hyperparameters the sampler actually runs with: the global and
    /// no-bias variants collapse to a single group.
    pub fn effective_hyperparameters(&self, hp: &Hyperparameters) -> Hyperparameters {
        match self.bias_mode {
            BiasMode::Group => hp.clone(),
            BiasMode::Global | BiasMode::None => hp.regrouped(1),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model kind `{s}`")))
    }
}

/// Fits one of the six variants. The full kind is the ordinal group-bias
/// model itself.
pub fn fit_baseline(
    kind: BaselineKind,
    data: &RatingsDataset,
    hp: &Hyperparameters,
    cfg: &RunConfig,
) -> Result<PosteriorSamples> {
    gibbs::fit_kind(kind, data, hp, cfg)
}
