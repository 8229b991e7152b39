//! The closed set of preference categories and a dense per-category map.

use core::fmt;
use core::marker::PhantomData;
use core::ops::{Index, IndexMut};
use core::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A criterion a user can express a preference over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceCategory {
    Distance,
    Price,
    Power,
    Rating,
}

impl PreferenceCategory {
    /// Every category, in canonical order.
    pub const ALL: [PreferenceCategory; 4] = [
        PreferenceCategory::Distance,
        PreferenceCategory::Price,
        PreferenceCategory::Power,
        PreferenceCategory::Rating,
    ];

    #[inline]
    pub const fn index(self) -> usize {
        match self {
            PreferenceCategory::Distance => 0,
            PreferenceCategory::Price => 1,
            PreferenceCategory::Power => 2,
            PreferenceCategory::Rating => 3,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            PreferenceCategory::Distance => "distance",
            PreferenceCategory::Price => "price",
            PreferenceCategory::Power => "power",
            PreferenceCategory::Rating => "rating",
        }
    }
}

impl fmt::Display for PreferenceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Returned when a string names no known category.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown preference category `{0}`")]
pub struct UnknownCategory(pub alloc::string::String);

impl FromStr for PreferenceCategory {
    type Err = UnknownCategory;

    /// Case-insensitive; accepts the canonical names only.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        PreferenceCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| UnknownCategory(trimmed.into()))
    }
}

/// One value per category, stored densely.
///
/// Serializes as a map keyed by lowercase category name. Missing keys
/// deserialize to `T::default()`; unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CategoryMap<T>(pub [T; 4]);

impl<T> CategoryMap<T> {
    pub fn from_fn(mut f: impl FnMut(PreferenceCategory) -> T) -> Self {
        CategoryMap(PreferenceCategory::ALL.map(&mut f))
    }

    pub fn get(&self, category: PreferenceCategory) -> &T {
        &self.0[category.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PreferenceCategory, &T)> {
        PreferenceCategory::ALL.into_iter().zip(self.0.iter())
    }

    pub fn values(&self) -> &[T; 4] {
        &self.0
    }
}

impl<T> Index<PreferenceCategory> for CategoryMap<T> {
    type Output = T;

    fn index(&self, category: PreferenceCategory) -> &T {
        &self.0[category.index()]
    }
}

impl<T> IndexMut<PreferenceCategory> for CategoryMap<T> {
    fn index_mut(&mut self, category: PreferenceCategory) -> &mut T {
        &mut self.0[category.index()]
    }
}

impl<T: Serialize> Serialize for CategoryMap<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(4))?;
        for (category, value) in self.iter() {
            map.serialize_entry(category.as_str(), value)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de> + Default> Deserialize<'de> for CategoryMap<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MapVisitor<T>(PhantomData<T>);

        impl<'de, T: Deserialize<'de> + Default> Visitor<'de> for MapVisitor<T> {
            type Value = CategoryMap<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map keyed by distance, price, power or rating")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out = CategoryMap::<T>::from_fn(|_| T::default());
                let mut seen = [false; 4];
                while let Some(key) = access.next_key::<PreferenceCategory>()? {
                    if seen[key.index()] {
                        return Err(serde::de::Error::custom(alloc::format!(
                            "duplicate category `{key}`"
                        )));
                    }
                    seen[key.index()] = true;
                    out[key] = access.next_value()?;
                }
                Ok(out)
            }
        }

        deserializer.deserialize_map(MapVisitor(PhantomData))
    }
}
