//! Feedback-driven weight updates.
//!
//! Each feedback event nudges the weights additively by `eta * signal`.
//! The result is clamped at zero and renormalized so it remains a valid
//! [`WeightVector`]. If clamping wipes out every weight the vector resets to
//! uniform.

use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::category::{CategoryMap, PreferenceCategory};
use crate::weights::{normalize, WeightVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeedbackError {
    #[error("learning rate {0} must lie in (0, 1]")]
    LearningRate(f64),
    #[error("feedback signal for {0} must lie in [-1, 1]")]
    SignalOutOfRange(PreferenceCategory),
    #[error("feedback carries no nonzero signal")]
    NoSignal,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` requires `{field}`")]
    MissingField {
        action: &'static str,
        field: &'static str,
    },
    #[error("station `{0}` is not part of the latest recommendations")]
    UnknownStation(String),
}

/// Step size of the feedback update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LearningRate(f64);

impl LearningRate {
    pub const DEFAULT: LearningRate = LearningRate(0.1);

    pub fn new(eta: f64) -> Result<Self, FeedbackError> {
        if eta.is_finite() && eta > 0.0 && eta <= 1.0 {
            Ok(LearningRate(eta))
        } else {
            Err(FeedbackError::LearningRate(eta))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::DEFAULT
    }
}

impl TryFrom<f64> for LearningRate {
    type Error = FeedbackError;

    fn try_from(eta: f64) -> Result<Self, Self::Error> {
        LearningRate::new(eta)
    }
}

impl From<LearningRate> for f64 {
    fn from(eta: LearningRate) -> f64 {
        eta.0
    }
}

/// Per-category approval signals from one interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeedbackEvent")]
pub struct FeedbackEvent {
    session_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    station_id: Option<String>,
    signals: CategoryMap<f64>,
    /// Milliseconds since the Unix epoch, UTC.
    timestamp_ms: i64,
}

#[derive(Deserialize)]
struct RawFeedbackEvent {
    session_id: String,
    #[serde(default)]
    station_id: Option<String>,
    signals: CategoryMap<f64>,
    timestamp_ms: i64,
}

impl TryFrom<RawFeedbackEvent> for FeedbackEvent {
    type Error = FeedbackError;

    fn try_from(raw: RawFeedbackEvent) -> Result<Self, Self::Error> {
        FeedbackEvent::new(
            raw.session_id,
            raw.station_id,
            raw.signals,
            raw.timestamp_ms,
        )
    }
}

impl FeedbackEvent {
    pub fn new(
        session_id: impl Into<String>,
        station_id: Option<String>,
        signals: CategoryMap<f64>,
        timestamp_ms: i64,
    ) -> Result<Self, FeedbackError> {
        for (category, f) in signals.iter() {
            if !(-1.0..=1.0).contains(f) {
                return Err(FeedbackError::SignalOutOfRange(category));
            }
        }
        if signals.0.iter().all(|f| *f == 0.0) {
            return Err(FeedbackError::NoSignal);
        }
        Ok(FeedbackEvent {
            session_id: session_id.into(),
            station_id,
            signals,
            timestamp_ms,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn station_id(&self) -> Option<&str> {
        self.station_id.as_deref()
    }

    pub fn signals(&self) -> &CategoryMap<f64> {
        &self.signals
    }

    pub fn timestamp_ms(&self) -> i64 {
        self.timestamp_ms
    }
}

/// Updated weights, and whether the degenerate reset to uniform fired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub weights: WeightVector,
    pub reset: bool,
}

pub fn apply_feedback(
    weights: &WeightVector,
    feedback: &FeedbackEvent,
    eta: LearningRate,
) -> FeedbackOutcome {
    let updated = CategoryMap::from_fn(|c| {
        let u = weights.get(c) + eta.get() * feedback.signals[c];
        u.max(0.0)
    });
    match normalize(&updated) {
        Ok(weights) => FeedbackOutcome {
            weights,
            reset: false,
        },
        Err(_) => FeedbackOutcome {
            weights: WeightVector::uniform(),
            reset: true,
        },
    }
}

/// A gesture in the chat UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum UiAction {
    ThumbsUp {
        category: PreferenceCategory,
    },
    ThumbsDown {
        category: PreferenceCategory,
    },
    /// The user picked a station; `rationale` holds the two categories its
    /// explanation named.
    ChoseStation {
        station_id: String,
        rationale: [PreferenceCategory; 2],
    },
    RejectedStation {
        station_id: String,
        reason: PreferenceCategory,
    },
}

impl UiAction {
    /// Builds an action from its wire fields.
    ///
    /// `rationale_of` resolves a station id to the categories named in that
    /// station's latest explanation.
    pub fn parse(
        action: &str,
        category: Option<&str>,
        station_id: Option<&str>,
        rationale_of: impl FnOnce(&str) -> Option<[PreferenceCategory; 2]>,
    ) -> Result<Self, FeedbackError> {
        let category = |name: &'static str| -> Result<PreferenceCategory, FeedbackError> {
            category
                .ok_or(FeedbackError::MissingField {
                    action: name,
                    field: "category",
                })?
                .parse()
                .map_err(|e: crate::category::UnknownCategory| FeedbackError::UnknownAction(e.0))
        };
        let station = |name: &'static str| -> Result<String, FeedbackError> {
            station_id
                .map(ToString::to_string)
                .ok_or(FeedbackError::MissingField {
                    action: name,
                    field: "station_id",
                })
        };
        match action.trim() {
            "thumbs_up" => Ok(UiAction::ThumbsUp {
                category: category("thumbs_up")?,
            }),
            "thumbs_down" => Ok(UiAction::ThumbsDown {
                category: category("thumbs_down")?,
            }),
            "chose_station" => {
                let station_id = station("chose_station")?;
                let rationale = rationale_of(&station_id)
                    .ok_or_else(|| FeedbackError::UnknownStation(station_id.clone()))?;
                Ok(UiAction::ChoseStation {
                    station_id,
                    rationale,
                })
            }
            "rejected_station" => Ok(UiAction::RejectedStation {
                station_id: station("rejected_station")?,
                reason: category("rejected_station")?,
            }),
            other => Err(FeedbackError::UnknownAction(other.to_string())),
        }
    }

    pub fn station_id(&self) -> Option<&str> {
        match self {
            UiAction::ChoseStation { station_id, .. }
            | UiAction::RejectedStation { station_id, .. } => Some(station_id),
            _ => None,
        }
    }
}

/// Maps a UI gesture onto per-category signals.
pub fn feedback_from_ui_action(
    action: &UiAction,
    session_id: &str,
    timestamp_ms: i64,
) -> FeedbackEvent {
    let mut signals = CategoryMap([0.0; 4]);
    match action {
        UiAction::ThumbsUp { category } => signals[*category] = 1.0,
        UiAction::ThumbsDown { category } => signals[*category] = -1.0,
        UiAction::ChoseStation { rationale, .. } => {
            for c in rationale {
                signals[*c] = 0.5;
            }
        }
        UiAction::RejectedStation { reason, .. } => signals[*reason] = -0.5,
    }
    FeedbackEvent::new(
        session_id,
        action.station_id().map(ToString::to_string),
        signals,
        timestamp_ms,
    )
    .expect("UI actions always produce a nonzero in-range signal")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::SUM_TOLERANCE;
    use proptest::prelude::*;
    use PreferenceCategory::*;

    fn event(signals: [f64; 4]) -> FeedbackEvent {
        FeedbackEvent::new("s", None, CategoryMap(signals), 0).unwrap()
    }

    fn w(d: f64, p: f64, c: f64, r: f64) -> WeightVector {
        normalize(&CategoryMap([d, p, c, r])).unwrap()
    }

    #[test]
    fn thumbs_up_power_from_even_split() {
        let out = apply_feedback(
            &w(0.0, 0.0, 0.5, 0.5),
            &event([0.0, 0.0, 1.0, 0.0]),
            LearningRate(0.1),
        );
        assert!(!out.reset);
        assert!((out.weights.get(Power) - 6.0 / 11.0).abs() < 1e-15);
        assert!((out.weights.get(Rating) - 5.0 / 11.0).abs() < 1e-15);
        assert_eq!(out.weights.get(Distance), 0.0);
    }

    #[test]
    fn negative_signal_clamps_at_zero() {
        let start = w(0.25, 0.25, 0.25, 0.25);
        let out = apply_feedback(&start, &event([0.0, 0.0, 0.0, -1.0]), LearningRate(0.3));
        assert_eq!(out.weights.get(Rating), 0.0);
        assert!((out.weights.get(Power) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_resets_to_uniform() {
        let out = apply_feedback(
            &w(1.0, 0.0, 0.0, 0.0),
            &event([-1.0, 0.0, 0.0, 0.0]),
            LearningRate(1.0),
        );
        assert!(out.reset);
        assert_eq!(out.weights, WeightVector::uniform());
    }

    #[test]
    fn learning_rate_bounds() {
        assert!(LearningRate::new(0.0).is_err());
        assert!(LearningRate::new(1.0).is_ok());
        assert!(LearningRate::new(1.01).is_err());
        assert!(LearningRate::new(f64::NAN).is_err());
    }

    #[test]
    fn event_invariants() {
        assert_eq!(
            FeedbackEvent::new("s", None, CategoryMap([0.0; 4]), 0),
            Err(FeedbackError::NoSignal)
        );
        assert_eq!(
            FeedbackEvent::new("s", None, CategoryMap([0.0, 1.5, 0.0, 0.0]), 0),
            Err(FeedbackError::SignalOutOfRange(Price))
        );
    }

    #[test]
    fn ui_actions_map_to_signals() {
        let a = UiAction::parse("thumbs_down", Some("price"), None, |_| None).unwrap();
        assert_eq!(
            feedback_from_ui_action(&a, "s", 1).signals().0,
            [0.0, -1.0, 0.0, 0.0]
        );

        let a = UiAction::parse("chose_station", None, Some("x"), |_| {
            Some([Power, Distance])
        })
        .unwrap();
        let f = feedback_from_ui_action(&a, "s", 1);
        assert_eq!(f.signals().0, [0.5, 0.0, 0.5, 0.0]);
        assert_eq!(f.station_id(), Some("x"));

        let a = UiAction::parse("rejected_station", Some("rating"), Some("x"), |_| None).unwrap();
        assert_eq!(
            feedback_from_ui_action(&a, "s", 1).signals().0,
            [0.0, 0.0, 0.0, -0.5]
        );
    }

    #[test]
    fn malformed_actions_are_rejected() {
        assert_eq!(
            UiAction::parse("double_click", None, None, |_| None),
            Err(FeedbackError::UnknownAction("double_click".into()))
        );
        assert!(matches!(
            UiAction::parse("thumbs_up", None, None, |_| None),
            Err(FeedbackError::MissingField { .. })
        ));
        assert!(matches!(
            UiAction::parse("thumbs_up", Some("speed"), None, |_| None),
            Err(FeedbackError::UnknownAction(_))
        ));
        assert!(matches!(
            UiAction::parse("chose_station", None, Some("nope"), |_| None),
            Err(FeedbackError::UnknownStation(_))
        ));
    }

    #[test]
    fn repeated_boost_converges() {
        let mut weights = WeightVector::uniform();
        let boost = event([0.0, 0.0, 1.0, 0.0]);
        let mut last = weights.get(Power);
        for _ in 0..100 {
            weights = apply_feedback(&weights, &boost, LearningRate::DEFAULT).weights;
            assert!(weights.get(Power) > last);
            last = weights.get(Power);
        }
        assert!(last > 0.95);
    }

    #[test]
    fn tiny_eta_is_nearly_identity() {
        let start = w(0.1, 0.2, 0.3, 0.4);
        let out = apply_feedback(&start, &event([1.0, -1.0, 0.5, -0.5]), LearningRate(1e-9));
        for (a, b) in start.as_array().iter().zip(out.weights.as_array()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    fn weight_vector() -> impl Strategy<Value = WeightVector> {
        prop::array::uniform4(0.0f64..1.0)
            .prop_filter("nonzero", |a| a.iter().any(|v| *v > 1e-6))
            .prop_map(|a| normalize(&CategoryMap(a)).unwrap())
    }

    proptest! {
        #[test]
        fn output_is_a_weight_vector(
            start in weight_vector(),
            signals in prop::array::uniform4(-1.0f64..=1.0)
                .prop_filter("nonzero", |a| a.iter().any(|v| *v != 0.0)),
            eta in 1e-6f64..=1.0,
        ) {
            let out = apply_feedback(&start, &event(signals), LearningRate::new(eta).unwrap());
            let sum: f64 = out.weights.as_array().iter().sum();
            prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert!(out.weights.as_array().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn single_signal_moves_in_its_direction(
            start in weight_vector(),
            idx in 0usize..4,
            magnitude in 0.01f64..=1.0,
            positive in any::<bool>(),
            eta in 0.01f64..=1.0,
        ) {
            let mut signals = [0.0; 4];
            signals[idx] = if positive { magnitude } else { -magnitude };
            let out = apply_feedback(&start, &event(signals), LearningRate::new(eta).unwrap());
            let before = start.as_array();
            let after = out.weights.as_array();
            if positive {
                if before[idx] < 1.0 {
                    prop_assert!(after[idx] > before[idx]);
                }
                for j in (0..4).filter(|j| *j != idx) {
                    prop_assert!(after[j] <= before[j]);
                }
            } else {
                if before[idx] > 0.0 {
                    prop_assert!(after[idx] < before[idx]);
                }
                for j in (0..4).filter(|j| *j != idx) {
                    prop_assert!(after[j] >= before[j]);
                }
            }
        }
    }
}
