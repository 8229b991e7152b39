//! Charging stations and their prices.

use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriceUnit {
    #[serde(rename = "per_kWh")]
    PerKwh,
    #[serde(rename = "per_minute")]
    PerMinute,
    #[serde(rename = "flat")]
    Flat,
    #[serde(rename = "free")]
    Free,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PriceError {
    #[error("unparsable price `{0}`")]
    Unparsable(String),
    #[error("price amount {0} is negative or not finite")]
    InvalidAmount(f64),
    #[error("a free price must have amount 0")]
    FreeWithAmount,
}

/// What a station charges. Units are kept as given and never converted here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrice")]
pub struct Price {
    amount: f64,
    unit: PriceUnit,
}

#[derive(Deserialize)]
struct RawPrice {
    amount: f64,
    unit: PriceUnit,
}

impl TryFrom<RawPrice> for Price {
    type Error = PriceError;

    fn try_from(raw: RawPrice) -> Result<Self, Self::Error> {
        Price::new(raw.amount, raw.unit)
    }
}

impl Price {
    pub fn new(amount: f64, unit: PriceUnit) -> Result<Self, PriceError> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(PriceError::InvalidAmount(amount));
        }
        if unit == PriceUnit::Free && amount != 0.0 {
            return Err(PriceError::FreeWithAmount);
        }
        Ok(Price { amount, unit })
    }

    pub const fn free() -> Self {
        Price {
            amount: 0.0,
            unit: PriceUnit::Free,
        }
    }

    pub fn amount(&self) -> f64 {
        self.amount
    }

    pub fn unit(&self) -> PriceUnit {
        self.unit
    }

    pub fn is_free(&self) -> bool {
        self.unit == PriceUnit::Free
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            PriceUnit::Free => f.write_str("Free"),
            PriceUnit::PerKwh => write!(f, "${}/kWh", self.amount),
            PriceUnit::PerMinute => write!(f, "${}/min", self.amount),
            PriceUnit::Flat => write!(f, "${}", self.amount),
        }
    }
}

/// Parses the price strings found in station listings.
///
/// Accepted forms: `Free` (any case), `$X/kWh`, `$X/min` and a bare `$X`.
pub fn parse_price(text: &str) -> Result<Price, PriceError> {
    let unparsable = || PriceError::Unparsable(text.to_string());
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("free") {
        return Ok(Price::free());
    }
    let rest = trimmed.strip_prefix('$').ok_or_else(unparsable)?;
    let (number, unit) = match rest.split_once('/') {
        None => (rest, PriceUnit::Flat),
        Some((number, suffix)) => {
            let suffix = suffix.trim();
            let unit = if suffix.eq_ignore_ascii_case("kwh") {
                PriceUnit::PerKwh
            } else if suffix.eq_ignore_ascii_case("min") || suffix.eq_ignore_ascii_case("minute") {
                PriceUnit::PerMinute
            } else {
                return Err(unparsable());
            };
            (number, unit)
        }
    };
    let number = number.trim();
    if number.is_empty() || !number.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
        return Err(unparsable());
    }
    let amount: f64 = number.parse().map_err(|_| unparsable())?;
    Price::new(amount, unit)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StationError {
    #[error("station id is empty")]
    EmptyId,
    #[error("power {0} kW must be positive and finite")]
    Power(f64),
    #[error("rating {0} is outside [0, 5]")]
    Rating(f64),
    #[error("distance {0} km must be nonnegative and finite")]
    Distance(f64),
    #[error("record has neither coordinates nor a distance")]
    NoPosition,
}

/// A charging station after retrieval, with its distance from the user resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
    pub power_kw: f64,
    /// `None` when the listing had no price or it could not be parsed.
    pub price: Option<Price>,
    pub rating: Option<f64>,
    pub distance_km: f64,
}

impl Station {
    pub fn validate(&self) -> Result<(), StationError> {
        if self.id.is_empty() {
            return Err(StationError::EmptyId);
        }
        if !self.power_kw.is_finite() || self.power_kw <= 0.0 {
            return Err(StationError::Power(self.power_kw));
        }
        if let Some(r) = self.rating {
            if !(0.0..=5.0).contains(&r) {
                return Err(StationError::Rating(r));
            }
        }
        if !self.distance_km.is_finite() || self.distance_km < 0.0 {
            return Err(StationError::Distance(self.distance_km));
        }
        Ok(())
    }
}
