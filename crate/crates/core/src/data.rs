//! Ratings datasets: sparse multi-aspect ordinal observations with dense
//! user/item indexing.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input row before validation: external ids and raw integer ratings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub ratings: Vec<i64>,
}

impl RawRating {
    pub fn new(user: impl Into<String>, item: impl Into<String>, ratings: Vec<i64>) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            ratings,
        }
    }
}

/// A single user's ratings of one item on every aspect. Levels are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub user: usize,
    pub item: usize,
    pub ratings: Vec<u8>,
}

/// Validated ratings with dense 0-based user and item indices.
///
/// Immutable after construction. Per-user and per-item observation lists
/// are precomputed for the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingsDataset {
    num_levels: usize,
    aspect_names: Vec<String>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    observations: Vec<Observation>,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
}

/// Builds a [`RatingsDataset`] from raw rows.
///
/// Dense indices follow first appearance order, so identical input order
/// always yields identical index maps. `aspect_names` defaults to
/// `aspect1..aspectA` when absent.
pub fn validate_dataset(
    raw: &[RawRating],
    num_levels: usize,
    aspect_names: Option<Vec<String>>,
) -> Result<RatingsDataset> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    if num_levels == 0 {
        return Err(Error::InvalidConfig("number of levels must be positive".into()));
    }
    let num_aspects = aspect_names
        .as_ref()
        .map(Vec::len)
        .unwrap_or_else(|| raw[0].ratings.len());
    if num_aspects == 0 {
        return Err(Error::InconsistentAspectCount {
            row: 0,
            expected: 1,
            found: 0,
        });
    }
    let aspect_names =
        aspect_names.unwrap_or_else(|| (1..=num_aspects).map(|a| format!("aspect{a}")).collect());

    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut user_index = HashMap::new();
    let mut item_index = HashMap::new();
    let mut seen = HashSet::new();
    let mut observations = Vec::with_capacity(raw.len());

    for (row, r) in raw.iter().enumerate() {
        if r.ratings.len() != num_aspects {
            return Err(Error::InconsistentAspectCount {
                row,
                expected: num_aspects,
                found: r.ratings.len(),
            });
        }
        let mut levels = Vec::with_capacity(num_aspects);
        for &value in &r.ratings {
            if value < 1 || value as usize > num_levels || num_levels > u8::MAX as usize {
                return Err(Error::RatingOutOfRange {
                    value,
                    levels: num_levels,
                });
            }
            levels.push(value as u8);
        }
        let user = *user_index.entry(r.user.clone()).or_insert_with(|| {
            user_ids.push(r.user.clone());
            user_ids.len() - 1
        });
        let item = *item_index.entry(r.item.clone()).or_insert_with(|| {
            item_ids.push(r.item.clone());
            item_ids.len() - 1
        });
        if !seen.insert((user, item)) {
            return Err(Error::DuplicatePair {
                user: r.user.clone(),
                item: r.item.clone(),
            });
        }
        observations.push(Observation {
            user,
            item,
            ratings: levels,
        });
    }

    Ok(RatingsDataset::from_parts(
        num_levels,
        aspect_names,
        user_ids,
        item_ids,
        observations,
    ))
}

impl RatingsDataset {
    /// Assembles a dataset from already-indexed parts. Indices must be
    /// in range; callers inside the crate guarantee this.
    pub(crate) fn from_parts(
        num_levels: usize,
        aspect_names: Vec<String>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        observations: Vec<Observation>,
    ) -> Self {
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let mut by_user = vec![Vec::new(); user_ids.len()];
        let mut by_item = vec![Vec::new(); item_ids.len()];
        for (n, obs) in observations.iter().enumerate() {
            by_user[obs.user].push(n);
            by_item[obs.item].push(n);
        }
        Self {
            num_levels,
            aspect_names,
            user_ids,
            item_ids,
            user_index,
            item_index,
            observations,
            by_user,
            by_item,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_aspects(&self) -> usize {
        self.aspect_names.len()
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn aspect_names(&self) -> &[String] {
        &self.aspect_names
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// Observation indices for user `j`.
    pub fn user_observations(&self, j: usize) -> &[usize] {
        &self.by_user[j]
    }

    /// Observation indices for item `i`.
    pub fn item_observations(&self, i: usize) -> &[usize] {
        &self.by_item[i]
    }

    /// Keeps the selected observations while retaining the full user and
    /// item index space, so fold subsets share latent-state addressing.
    pub fn subset(&self, indices: &[usize]) -> RatingsDataset {
        let observations = indices
            .iter()
            .map(|&n| self.observations[n].clone())
            .collect();
        RatingsDataset::from_parts(
            self.num_levels,
            self.aspect_names.clone(),
            self.user_ids.clone(),
            self.item_ids.clone(),
            observations,
        )
    }

    /// Exports rows with external ids, in observation order.
    /// Same users, items and pattern with replacement ratings.
    pub(crate) fn with_ratings(&self, ratings: Vec<Vec<u8>>) -> RatingsDataset {
        assert_eq!(ratings.len(), self.observations.len());
        let observations = self
            .observations
            .iter()
            .zip(ratings)
            .map(|(o, ratings)| Observation { user: o.user, item: o.item, ratings })
            .collect();
        Self::from_parts(
            self.num_levels,
            self.aspect_names.clone(),
            self.user_ids.clone(),
            self.item_ids.clone(),
            observations,
        )
    }

    pub fn to_raw(&self) -> Vec<RawRating> {
        self.observations
            .iter()
            .map(|o| RawRating {
                user: self.user_ids[o.user].clone(),
                item: self.item_ids[o.item].clone(),
                ratings: o.ratings.iter().map(|&r| r as i64).collect(),
            })
            .collect()
    }

    /// Stable content hash over ids, levels and ratings.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.num_levels as u64).to_le_bytes());
        for name in &self.aspect_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for row in self.to_raw() {
            h.update(row.user.as_bytes());
            h.update([0u8]);
            h.update(row.item.as_bytes());
            h.update([0u8]);
            for r in row.ratings {
                h.update([r as u8]);
            }
        }
        hex::encode(h.finalize())
    }
}
