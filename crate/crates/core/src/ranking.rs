//! Constraint filtering, feature construction, cosine scoring and the final
//! explained top-k list.
//!
//! Raw station attributes live on incompatible scales (kilometers, dollars,
//! kilowatts, stars), so each category is min-max normalized across the
//! candidate set before scoring. Distance and price are inverted so that a
//! larger feature is always better. Scores are therefore relative to the
//! candidate set they were computed in.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::category::{CategoryMap, PreferenceCategory};
use crate::intent::ConstraintSet;
use crate::station::{PriceUnit, Station};
use crate::weights::WeightVector;

/// Power at or above which a station counts as fast charging.
pub const FAST_CHARGING_KW: f64 = 50.0;

/// Result list length when the caller does not choose one.
pub const DEFAULT_K: usize = 5;

/// Feature value used for missing data and for categories without spread.
pub const NEUTRAL_FEATURE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankingError {
    #[error("no feasible station")]
    EmptyCandidateSet,
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("result size k must be at least 1")]
    InvalidK,
}

/// Data-quality markers carried alongside a station's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// No rating was available; the rating feature is neutral.
    MissingRating,
    /// No usable price was available; the price feature is neutral.
    MissingPrice,
    /// The price unit cannot be compared with the others (flat fees).
    PriceNotComparable,
    /// A price cap was requested but could not be checked for this station.
    UnverifiedPrice,
}

impl Flag {
    const ALL: [Flag; 4] = [
        Flag::MissingRating,
        Flag::MissingPrice,
        Flag::PriceNotComparable,
        Flag::UnverifiedPrice,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// A small set of [`Flag`]s. Serializes as a list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Flag>", into = "Vec<Flag>")]
pub struct Flags(u8);

impl Flags {
    pub fn insert(&mut self, flag: Flag) {
        self.0 |= flag.bit();
    }

    pub fn contains(&self, flag: Flag) -> bool {
        self.0 & flag.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Flags) -> Flags {
        Flags(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = Flag> + '_ {
        Flag::ALL.into_iter().filter(|f| self.contains(*f))
    }
}

impl From<Vec<Flag>> for Flags {
    fn from(list: Vec<Flag>) -> Self {
        let mut flags = Flags::default();
        for f in list {
            flags.insert(f);
        }
        flags
    }
}

impl From<Flags> for Vec<Flag> {
    fn from(flags: Flags) -> Self {
        flags.iter().collect()
    }
}

/// A station's normalized attributes, larger is better in every category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub station_id: String,
    pub values: CategoryMap<f64>,
    pub flags: Flags,
}

impl FeatureVector {
    pub fn get(&self, category: PreferenceCategory) -> f64 {
        self.values[category]
    }
}

/// A station that passed the hard constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasible {
    pub station: Station,
    pub flags: Flags,
}

/// One entry of a ranked result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecommendation {
    pub station: Station,
    /// 1-based position in the list.
    pub rank: usize,
    /// Cosine similarity between the weights and the station's features.
    pub score: f64,
    /// Plain weighted sum of the features, reported alongside the score.
    pub weighted_sum: f64,
    pub features: CategoryMap<f64>,
    /// The two categories with the largest weighted contribution.
    pub top_categories: [PreferenceCategory; 2],
    pub flags: Flags,
    pub rationale: String,
}

/// Cost per kWh used to compare prices across units.
///
/// Per-minute prices are converted at the station's rated power. Flat fees
/// have no per-energy meaning and yield `None`.
fn comparable_cost(station: &Station) -> Option<f64> {
    let price = station.price?;
    match price.unit() {
        PriceUnit::Free => Some(0.0),
        PriceUnit::PerKwh => Some(price.amount()),
        PriceUnit::PerMinute => Some(price.amount() * 60.0 / station.power_kw),
        PriceUnit::Flat => None,
    }
}

fn min_max(values: &[Option<f64>], invert: bool) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let spread = hi - lo;
    values
        .iter()
        .map(|v| match v {
            Some(v) if spread > 0.0 => {
                if invert {
                    (hi - v) / spread
                } else {
                    (v - lo) / spread
                }
            }
            _ => NEUTRAL_FEATURE,
        })
        .collect()
}

/// Min-max normalizes every category across `stations`.
pub fn build_features(stations: &[Station]) -> Result<Vec<FeatureVector>, RankingError> {
    if stations.is_empty() {
        return Err(RankingError::EmptyCandidateSet);
    }
    let column = |f: &dyn Fn(&Station) -> Option<f64>| -> Vec<Option<f64>> {
        stations.iter().map(f).collect()
    };
    let distance = min_max(&column(&|s| Some(s.distance_km)), true);
    let price = min_max(&column(&comparable_cost), true);
    let power = min_max(&column(&|s| Some(s.power_kw)), false);
    let rating = min_max(&column(&|s| s.rating), false);

    Ok(stations
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut flags = Flags::default();
            if s.rating.is_none() {
                flags.insert(Flag::MissingRating);
            }
            match s.price {
                None => flags.insert(Flag::MissingPrice),
                Some(p) if p.unit() == PriceUnit::Flat => flags.insert(Flag::PriceNotComparable),
                Some(_) => {}
            }
            FeatureVector {
                station_id: s.id.clone(),
                values: CategoryMap([distance[i], price[i], power[i], rating[i]]),
                flags,
            }
        })
        .collect())
}

/// Keeps the stations that satisfy every present constraint.
///
/// A price cap is only checked against stations priced in the same unit.
/// Free stations always pass it. Stations without a price, or priced in
/// another unit, are kept and flagged [`Flag::UnverifiedPrice`].
pub fn filter_feasible(stations: &[Station], constraints: &ConstraintSet) -> Vec<Feasible> {
    stations
        .iter()
        .filter_map(|s| {
            let mut flags = Flags::default();
            if let Some(d_max) = constraints.max_distance_km {
                if s.distance_km > d_max {
                    return None;
                }
            }
            if let Some(c_min) = constraints.min_power_kw {
                if s.power_kw < c_min {
                    return None;
                }
            }
            if let Some(cap) = constraints.max_price {
                match s.price {
                    Some(p) if p.is_free() => {}
                    Some(p) if p.unit() == cap.unit() => {
                        if p.amount() > cap.amount() {
                            return None;
                        }
                    }
                    _ => flags.insert(Flag::UnverifiedPrice),
                }
            }
            Some(Feasible {
                station: s.clone(),
                flags,
            })
        })
        .collect()
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn norm(a: &[f64; 4]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity of two nonnegative vectors, clamped to `[0, 1]`.
pub(crate) fn cosine(a: &[f64; 4], b: &[f64; 4]) -> Result<f64, RankingError> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(RankingError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(0.0, 1.0))
}

/// Relevance of a station to the user's weights.
pub fn similarity(weights: &WeightVector, features: &FeatureVector) -> Result<f64, RankingError> {
    cosine(weights.as_array(), features.values.values())
}

fn top_two(weights: &WeightVector, features: &CategoryMap<f64>) -> [PreferenceCategory; 2] {
    let mut cats = PreferenceCategory::ALL;
    let contribution = |c: PreferenceCategory| weights.get(c) * features[c];
    // Stable sort keeps canonical order among equal contributions.
    cats.sort_by(|a, b| contribution(*b).total_cmp(&contribution(*a)));
    [cats[0], cats[1]]
}

fn describe(category: PreferenceCategory, station: &Station) -> String {
    match category {
        PreferenceCategory::Power if station.power_kw >= FAST_CHARGING_KW => {
            format!("fast charging ({} kW)", station.power_kw)
        }
        PreferenceCategory::Power => format!("{} kW charging", station.power_kw),
        PreferenceCategory::Distance => format!("a distance of {} km", station.distance_km),
        PreferenceCategory::Price => match station.price {
            Some(p) if p.is_free() => String::from("free charging"),
            Some(p) => format!("a price of {p}"),
            None => String::from("an unlisted price"),
        },
        PreferenceCategory::Rating => match station.rating {
            Some(r) => format!("a rating of {r}/5"),
            None => String::from("an unknown rating"),
        },
    }
}

/// Human-readable reason for a recommendation.
///
/// Names the station's two largest weighted contributions along with the
/// underlying raw values, then any missing-data notes.
pub fn explain(recommendation: &RankedRecommendation, weights: &WeightVector) -> String {
    let station = &recommendation.station;
    let [first, second] = top_two(weights, &recommendation.features);
    let mut text = format!(
        "{}: recommended for {} and {}.",
        station.name,
        describe(first, station),
        describe(second, station)
    );
    if recommendation.flags.contains(Flag::MissingRating) {
        text.push_str(" Note: rating unavailable.");
    }
    if recommendation.flags.contains(Flag::MissingPrice) {
        text.push_str(" Note: price unavailable.");
    }
    if recommendation.flags.contains(Flag::UnverifiedPrice) {
        text.push_str(" Note: price cap could not be verified.");
    }
    text
}

/// Orders by score descending, then distance ascending, then station id.
pub fn compare_ranked(a_score: f64, a: &Station, b_score: f64, b: &Station) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a.distance_km.total_cmp(&b.distance_km))
        .then_with(|| a.id.cmp(&b.id))
}

/// Filters, scores and sorts `stations`, returning the best `k`.
///
/// A station whose features are all zero (worst in every category) has no
/// defined cosine and scores 0.
pub fn rank(
    stations: &[Station],
    weights: &WeightVector,
    constraints: &ConstraintSet,
    k: usize,
) -> Result<Vec<RankedRecommendation>, RankingError> {
    if k == 0 {
        return Err(RankingError::InvalidK);
    }
    let feasible = filter_feasible(stations, constraints);
    if feasible.is_empty() {
        return Err(RankingError::EmptyCandidateSet);
    }
    let candidates: Vec<Station> = feasible.iter().map(|f| f.station.clone()).collect();
    let features = build_features(&candidates)?;

    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(features.len());
    for (i, fv) in features.iter().enumerate() {
        let score = match similarity(weights, fv) {
            Ok(s) => s,
            Err(RankingError::ZeroVector) if fv.values.0.iter().all(|v| *v == 0.0) => 0.0,
            Err(e) => return Err(e),
        };
        scored.push((score, i));
    }
    scored
        .sort_by(|(sa, ia), (sb, ib)| compare_ranked(*sa, &candidates[*ia], *sb, &candidates[*ib]));
    scored.truncate(k);

    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(pos, (score, i))| {
            let fv = &features[i];
            let mut rec = RankedRecommendation {
                station: candidates[i].clone(),
                rank: pos + 1,
                score,
                weighted_sum: dot(weights.as_array(), fv.values.values()),
                features: fv.values,
                top_categories: top_two(weights, &fv.values),
                flags: fv.flags.union(feasible[i].flags),
                rationale: String::new(),
            };
            rec.rationale = explain(&rec, weights);
            rec
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::station::{parse_price, Price};
    use crate::weights::normalize;
    use alloc::vec;
    use PreferenceCategory::*;

    fn station(id: &str, power: f64, dist: f64, price: &str, rating: Option<f64>) -> Station {
        Station {
            id: id.into(),
            name: id.into(),
            location: None,
            power_kw: power,
            price: parse_price(price).ok(),
            rating,
            distance_km: dist,
        }
    }

    fn weights(d: f64, p: f64, c: f64, r: f64) -> WeightVector {
        normalize(&CategoryMap([d, p, c, r])).unwrap()
    }

    fn fv(values: [f64; 4]) -> FeatureVector {
        FeatureVector {
            station_id: "s".into(),
            values: CategoryMap(values),
            flags: Flags::default(),
        }
    }

    #[test]
    fn power_column_min_max() {
        let s = [
            station("a", 150.0, 1.6, "Free", Some(4.0)),
            station("b", 150.0, 1.8, "Free", Some(4.0)),
            station("c", 6.6, 1.2, "Free", Some(4.0)),
        ];
        let f = build_features(&s).unwrap();
        let power: Vec<f64> = f.iter().map(|f| f.get(Power)).collect();
        assert_eq!(power, vec![1.0, 1.0, 0.0]);
        // Zero spread in price and rating.
        assert!(f
            .iter()
            .all(|f| f.get(Price) == 0.5 && f.get(Rating) == 0.5));
    }

    #[test]
    fn lone_station_is_neutral() {
        let f = build_features(&[station("a", 22.0, 3.0, "$0.30/kWh", Some(3.0))]).unwrap();
        assert_eq!(f[0].values.0, [0.5; 4]);
    }

    #[test]
    fn distance_is_inverted() {
        let s = [
            station("a", 50.0, 1.2, "Free", None),
            station("b", 50.0, 1.8, "Free", None),
        ];
        let f = build_features(&s).unwrap();
        assert_eq!(f[0].get(Distance), 1.0);
        assert_eq!(f[1].get(Distance), 0.0);
        assert!(f[0].flags.contains(Flag::MissingRating));
    }

    #[test]
    fn missing_and_flat_prices_are_neutral() {
        let s = [
            station("a", 50.0, 1.0, "$0.20/kWh", Some(4.0)),
            station("b", 50.0, 1.0, "$0.40/kWh", Some(4.0)),
            station("c", 50.0, 1.0, "gratis", Some(4.0)),
            station("d", 50.0, 1.0, "$3", Some(4.0)),
        ];
        let f = build_features(&s).unwrap();
        assert_eq!(f[0].get(Price), 1.0);
        assert_eq!(f[1].get(Price), 0.0);
        assert_eq!(f[2].get(Price), 0.5);
        assert!(f[2].flags.contains(Flag::MissingPrice));
        assert_eq!(f[3].get(Price), 0.5);
        assert!(f[3].flags.contains(Flag::PriceNotComparable));
    }

    #[test]
    fn per_minute_price_converted_at_rated_power() {
        // $0.44/min at 150 kW is $0.176/kWh, between the other two.
        let s = [
            station("a", 150.0, 1.0, "$0.44/min", None),
            station("b", 150.0, 1.0, "$0.10/kWh", None),
            station("c", 150.0, 1.0, "$0.276/kWh", None),
        ];
        let f = build_features(&s).unwrap();
        assert!((f[0].get(Price) - (0.276 - 0.176) / (0.276 - 0.10)).abs() < 1e-12);
    }

    #[test]
    fn empty_features_error() {
        assert_eq!(build_features(&[]), Err(RankingError::EmptyCandidateSet));
    }

    #[test]
    fn cosine_examples() {
        let w = weights(0.0, 0.0, 1.0, 0.0);
        assert_eq!(similarity(&w, &fv([0.0, 0.0, 1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(similarity(&w, &fv([0.0, 0.0, 0.0, 1.0])).unwrap(), 0.0);
        let w = weights(0.0, 0.0, 0.5, 0.5);
        let s = similarity(&w, &fv([0.0, 0.0, 1.0, 1.0])).unwrap();
        // Independent arithmetic: 1 / (sqrt(0.5) * sqrt(2)).
        let expected = (0.5 + 0.5) / (libm::sqrt(0.5) * libm::sqrt(2.0));
        assert!((s - expected).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(similarity(&w, &fv([0.0; 4])), Err(RankingError::ZeroVector));
    }

    #[test]
    fn filter_examples() {
        let s = [
            station("near", 6.6, 1.2, "Free", Some(4.5)),
            station("fast", 150.0, 1.8, "$0.44/min", Some(4.7)),
            station("kwh", 150.0, 1.6, "$0.57/kWh", Some(2.6)),
            station("unknown", 22.0, 2.0, "call", None),
        ];
        let all = filter_feasible(&s, &ConstraintSet::default());
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|f| f.flags.is_empty()));

        let fast = filter_feasible(
            &s,
            &ConstraintSet {
                min_power_kw: Some(50.0),
                ..Default::default()
            },
        );
        let ids: Vec<&str> = fast.iter().map(|f| f.station.id.as_str()).collect();
        assert_eq!(ids, ["fast", "kwh"]);

        let close = filter_feasible(
            &s,
            &ConstraintSet {
                max_distance_km: Some(0.5),
                ..Default::default()
            },
        );
        assert!(close.is_empty());

        let capped = filter_feasible(
            &s,
            &ConstraintSet {
                max_price: Some(Price::new(0.5, PriceUnit::PerKwh).unwrap()),
                ..Default::default()
            },
        );
        let ids: Vec<(&str, bool)> = capped
            .iter()
            .map(|f| {
                (
                    f.station.id.as_str(),
                    f.flags.contains(Flag::UnverifiedPrice),
                )
            })
            .collect();
        assert_eq!(ids, [("near", false), ("fast", true), ("unknown", true)]);
    }

    #[test]
    fn rank_singleton() {
        let s = [station("only", 22.0, 2.0, "Free", Some(4.0))];
        let out = rank(
            &s,
            &weights(0.0, 0.0, 1.0, 1.0),
            &ConstraintSet::default(),
            5,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].rank, 1);
        assert_eq!(out[0].station.id, "only");
        assert!(out[0].rationale.contains("22 kW charging"));
    }

    #[test]
    fn rank_reports_empty_candidate_set() {
        let s = [station("a", 6.6, 1.2, "Free", None)];
        let c = ConstraintSet {
            min_power_kw: Some(50.0),
            ..Default::default()
        };
        assert_eq!(
            rank(&s, &WeightVector::uniform(), &c, 5),
            Err(RankingError::EmptyCandidateSet)
        );
        assert_eq!(
            rank(&s, &WeightVector::uniform(), &ConstraintSet::default(), 0),
            Err(RankingError::InvalidK)
        );
    }

    #[test]
    fn ties_break_on_distance_then_id() {
        // Distance and price features mirror each other, so the norms and
        // the power-only scores coincide exactly.
        let s = [
            station("b", 50.0, 2.0, "$0.20/kWh", Some(4.0)),
            station("a", 50.0, 2.0, "$0.20/kWh", Some(4.0)),
            station("z", 50.0, 1.0, "$0.40/kWh", Some(4.0)),
        ];
        let out = rank(
            &s,
            &weights(0.0, 0.0, 1.0, 0.0),
            &ConstraintSet::default(),
            3,
        )
        .unwrap();
        assert_eq!(out[0].score, out[2].score);
        let ids: Vec<&str> = out.iter().map(|r| r.station.id.as_str()).collect();
        assert_eq!(ids, ["z", "a", "b"]);
    }

    #[test]
    fn dominated_station_scores_zero() {
        let s = [
            station("good", 150.0, 1.0, "$0.10/kWh", Some(5.0)),
            station("bad", 7.0, 9.0, "$0.90/kWh", Some(1.0)),
        ];
        let out = rank(&s, &WeightVector::uniform(), &ConstraintSet::default(), 2).unwrap();
        assert_eq!(out[1].station.id, "bad");
        assert_eq!(out[1].score, 0.0);
    }

    #[test]
    fn explain_names_top_contributions() {
        let s = [
            station("Canadian Tire", 150.0, 1.6, "$0.57/kWh", Some(2.6)),
            station("Supercharger", 150.0, 1.8, "$0.44/min", Some(4.7)),
            station("Fairfield Inn", 6.6, 1.2, "Free", Some(4.5)),
        ];
        let w = weights(0.5, 0.0, 0.5, 0.0);
        let out = rank(&s, &w, &ConstraintSet::default(), 3).unwrap();
        assert_eq!(out[0].station.id, "Canadian Tire");
        assert_eq!(out[0].top_categories, [Power, Distance]);
        assert!(out[0].rationale.contains("fast charging (150 kW)"));
        assert!(out[0].rationale.contains("1.6 km"));
        assert_eq!(explain(&out[0], &w), out[0].rationale);
    }

    #[test]
    fn explain_flags_missing_rating() {
        let s = [
            station("a", 150.0, 1.0, "Free", None),
            station("b", 7.0, 2.0, "Free", Some(3.0)),
        ];
        let out = rank(&s, &WeightVector::uniform(), &ConstraintSet::default(), 2).unwrap();
        let a = out.iter().find(|r| r.station.id == "a").unwrap();
        assert!(a.rationale.ends_with("rating unavailable."));
    }

    #[test]
    fn flags_serialize_as_list() {
        let mut f = Flags::default();
        f.insert(Flag::UnverifiedPrice);
        f.insert(Flag::MissingRating);
        let list: Vec<Flag> = f.into();
        assert_eq!(list, vec![Flag::MissingRating, Flag::UnverifiedPrice]);
        assert_eq!(Flags::from(list), f);
    }
}
