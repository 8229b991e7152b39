//! Preference weight vectors.
//!
//! A [`WeightVector`] always holds one nonnegative weight per category and
//! its weights sum to one. The only ways to build one are [`normalize`],
//! [`weights_from_intents`], [`WeightVector::uniform`] and validated
//! deserialization, so every value in circulation satisfies the invariant.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::category::{CategoryMap, PreferenceCategory};

/// Maximum allowed deviation of a weight vector's sum from one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeightError {
    #[error("weights are all zero or do not sum to a finite value")]
    Degenerate,
    #[error("weight for {0} is negative or not finite")]
    InvalidComponent(PreferenceCategory),
    #[error("weights sum to {0}, expected 1")]
    NotNormalized(f64),
}

/// Normalized preference weights over the four categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CategoryMap<f64>", into = "CategoryMap<f64>")]
pub struct WeightVector(CategoryMap<f64>);

impl WeightVector {
    /// Equal weight on every category.
    pub fn uniform() -> Self {
        WeightVector(CategoryMap([0.25; 4]))
    }

    pub fn get(&self, category: PreferenceCategory) -> f64 {
        self.0[category]
    }

    pub fn as_array(&self) -> &[f64; 4] {
        self.0.values()
    }

    pub fn as_map(&self) -> &CategoryMap<f64> {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (PreferenceCategory, f64)> + '_ {
        self.0.iter().map(|(c, w)| (c, *w))
    }

    /// Euclidean norm of the weights.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0 .0.iter().map(|w| w * w).sum())
    }

    /// Checks an already-normalized map without rescaling it.
    pub fn validate(map: CategoryMap<f64>) -> Result<Self, WeightError> {
        for (category, w) in map.iter() {
            if !w.is_finite() || *w < 0.0 {
                return Err(WeightError::InvalidComponent(category));
            }
        }
        let sum: f64 = map.0.iter().sum();
        if libm::fabs(sum - 1.0) > SUM_TOLERANCE {
            return Err(WeightError::NotNormalized(sum));
        }
        Ok(WeightVector(map))
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        WeightVector::uniform()
    }
}

impl TryFrom<CategoryMap<f64>> for WeightVector {
    type Error = WeightError;

    fn try_from(map: CategoryMap<f64>) -> Result<Self, Self::Error> {
        WeightVector::validate(map)
    }
}

impl From<WeightVector> for CategoryMap<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Rescales nonnegative raw weights so they sum to one.
pub fn normalize(raw: &CategoryMap<f64>) -> Result<WeightVector, WeightError> {
    for (category, v) in raw.iter() {
        if !v.is_finite() || *v < 0.0 {
            return Err(WeightError::InvalidComponent(category));
        }
    }
    let sum: f64 = raw.0.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(WeightError::Degenerate);
    }
    Ok(WeightVector(CategoryMap(raw.0.map(|v| v / sum))))
}

/// Equal weight on each mentioned category; uniform when nothing was mentioned.
///
/// Repeated categories count once.
pub fn weights_from_intents(intents: &[PreferenceCategory]) -> WeightVector {
    let mut mentioned = [false; 4];
    for c in intents {
        mentioned[c.index()] = true;
    }
    let count = mentioned.iter().filter(|m| **m).count();
    if count == 0 {
        return WeightVector::uniform();
    }
    let share = 1.0 / count as f64;
    WeightVector(CategoryMap(mentioned.map(|m| if m { share } else { 0.0 })))
}

/// Categories in descending weight order; ties keep canonical order.
pub fn ranked_categories(weights: &WeightVector) -> Vec<PreferenceCategory> {
    let mut cats: Vec<_> = PreferenceCategory::ALL.into();
    cats.sort_by(|a, b| weights.get(*b).total_cmp(&weights.get(*a)));
    cats
}
