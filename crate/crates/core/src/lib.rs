//! Pure recommendation pipeline for EV charging stations.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the parts of the
//! pipeline that do not touch the outside world:
//!
//! * [`intent`]: keyword-driven intent and constraint extraction,
//! * [`weights`]: the preference weight vector and its normalization,
//! * [`geo`] and [`station`]: coordinates, great-circle distance, station
//!   records and price parsing,
//! * [`ranking`]: feature construction, constraint filtering, cosine scoring
//!   and explained top-k lists,
//! * [`adaptation`]: feedback-driven weight updates.
//!
//! IO, the HTTP service, persistence and the CLI live in the `recombot` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adaptation;
pub mod category;
pub mod geo;
pub mod intent;
pub mod ranking;
pub mod station;
pub mod weights;

pub use adaptation::{
    apply_feedback, feedback_from_ui_action, FeedbackError, FeedbackEvent, FeedbackOutcome,
    LearningRate, UiAction,
};
pub use category::{CategoryMap, PreferenceCategory};
pub use geo::{haversine, GeoError, GeoPoint, EARTH_RADIUS_KM};
pub use intent::{
    extract_intents, extract_with_fallback, ConstraintError, ConstraintSet, Extraction,
    ExtractorError, IntentExtractor, KeywordTable, Query, RuleBasedExtractor,
};
pub use ranking::{
    build_features, explain, filter_feasible, rank, similarity, Feasible, FeatureVector, Flag,
    Flags, RankedRecommendation, RankingError, DEFAULT_K, FAST_CHARGING_KW,
};
pub use station::{parse_price, Price, PriceError, PriceUnit, Station, StationError};
pub use weights::{normalize, weights_from_intents, WeightError, WeightVector};
