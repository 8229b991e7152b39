//! Offline station fixtures.
//!
//! A fixture is a UTF-8 JSON document:
//!
//! ```json
//! {
//!   "name": "kamloops",                                  // optional
//!   "origin": { "lat": 50.640054, "lon": -120.378926 },  // optional
//!   "stations": [
//!     { "id": "...", "name": "...", "lat": 50.6, "lon": -120.3,
//!       "distance_km": 1.6, "power_kw": 150, "price_text": "$0.44/min",
//!       "rating": 4.7 }
//!   ]
//! }
//! ```
//!
//! `lat`/`lon` come as a pair. A record without coordinates must carry
//! `distance_km`, measured from the fixture's origin. Queried from that origin
//! it is used verbatim; from anywhere else the record could lie anywhere on a
//! circle, so it is placed at the far bound `d(query, origin) + distance_km`.
//! A fixture without an origin takes such distances verbatim from any query
//! point. When coordinates are present the distance is computed from the
//! query origin and any `distance_km` is ignored. Unknown keys are rejected.
//! An empty file holds zero records.

use std::fs;
use std::path::{Path, PathBuf};

use recombot_core::{haversine, parse_price, GeoError, GeoPoint, Station, StationError};
use serde::{Deserialize, Serialize};

const KAMLOOPS: &str = include_str!("../fixtures/kamloops.json");

/// Names of fixtures compiled into the binary.
pub const BUNDLED: &[&str] = &["kamloops"];

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture not found: {0}")]
    NotFound(String),
    #[error("reading fixture {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixture is not valid JSON: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationRecord {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    pub power_kw: f64,
    pub price_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Shape(String),
    #[error("lat and lon must be given together")]
    HalfCoordinates,
    #[error(transparent)]
    Coordinates(#[from] GeoError),
    #[error(transparent)]
    Station(#[from] StationError),
}

impl StationRecord {
    fn location(&self) -> Result<Option<GeoPoint>, RecordError> {
        match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Ok(Some(GeoPoint::new(lat, lon)?)),
            (None, None) => Ok(None),
            _ => Err(RecordError::HalfCoordinates),
        }
    }

    /// Resolves the record against a query from `origin`; `anchor` is the
    /// point distance-only records are measured from. An unparsable price
    /// becomes a missing price, not an error.
    pub fn to_station(
        &self,
        origin: GeoPoint,
        anchor: Option<GeoPoint>,
    ) -> Result<Station, RecordError> {
        let location = self.location()?;
        let distance_km = match (location, self.distance_km) {
            (Some(loc), _) => haversine(origin, loc),
            (None, Some(d)) => match anchor {
                Some(a) if a != origin => haversine(origin, a) + d,
                _ => d,
            },
            (None, None) => return Err(StationError::NoPosition.into()),
        };
        let station = Station {
            id: self.id.clone(),
            name: self.name.clone(),
            location,
            power_kw: self.power_kw,
            price: parse_price(&self.price_text).ok(),
            rating: self.rating,
            distance_km,
        };
        station.validate()?;
        Ok(station)
    }

    /// Checks the record's invariants without an origin.
    pub fn validate(&self) -> Result<(), RecordError> {
        let location = self.location()?;
        if location.is_none() && self.distance_km.is_none() {
            return Err(StationError::NoPosition.into());
        }
        let probe = Station {
            id: self.id.clone(),
            name: self.name.clone(),
            location,
            power_kw: self.power_kw,
            price: None,
            rating: self.rating,
            distance_km: self.distance_km.unwrap_or(0.0),
        };
        probe.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRecord {
    pub index: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// One record slot of a fixture, parsed independently of its neighbours.
#[derive(Debug, Clone)]
pub struct RecordSlot {
    pub index: usize,
    pub raw_id: Option<String>,
    pub record: Result<StationRecord, RecordError>,
}

impl RecordSlot {
    /// The record, checked against station invariants.
    pub fn checked(&self) -> Result<&StationRecord, RecordError> {
        let record = self.record.as_ref().map_err(Clone::clone)?;
        record.validate()?;
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: Option<String>,
    pub origin: Option<GeoPoint>,
    pub records: Vec<RecordSlot>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    origin: Option<GeoPoint>,
    #[serde(default)]
    stations: Vec<serde_json::Value>,
    #[serde(default)]
    #[allow(dead_code)]
    notes: Option<serde_json::Value>,
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        if text.trim().is_empty() {
            return Ok(Fixture {
                name: None,
                origin: None,
                records: Vec::new(),
            });
        }
        let doc: Document =
            serde_json::from_str(text).map_err(|e| FixtureError::Syntax(e.to_string()))?;
        let records = doc
            .stations
            .into_iter()
            .enumerate()
            .map(|(index, value)| {
                let raw_id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
                let record = serde_json::from_value::<StationRecord>(value)
                    .map_err(|e| RecordError::Shape(e.to_string()));
                RecordSlot {
                    index,
                    raw_id,
                    record,
                }
            })
            .collect();
        Ok(Fixture {
            name: doc.name,
            origin: doc.origin,
            records,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                FixtureError::NotFound(path.display().to_string())
            } else {
                FixtureError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        Fixture::parse(&text)
    }

    /// A path on disk, or the name of a bundled fixture.
    pub fn load(spec: &str) -> Result<Self, FixtureError> {
        let path = Path::new(spec);
        if path.exists() {
            return Fixture::from_path(path);
        }
        match spec {
            "kamloops" => Fixture::parse(KAMLOOPS),
            _ => Err(FixtureError::NotFound(spec.to_string())),
        }
    }

    /// Stations within `radius_km` of `origin`, with malformed records split out.
    pub fn stations_within(
        &self,
        origin: GeoPoint,
        radius_km: f64,
    ) -> (Vec<Station>, Vec<MalformedRecord>) {
        let mut stations = Vec::new();
        let mut malformed = Vec::new();
        for slot in &self.records {
            let resolved = slot
                .record
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|r| r.to_station(origin, self.origin));
            match resolved {
                Ok(s) if s.distance_km <= radius_km => stations.push(s),
                Ok(_) => {}
                Err(e) => {
                    log::warn!("skipping fixture record {}: {e}", slot.index);
                    malformed.push(MalformedRecord {
                        index: slot.index,
                        id: slot.raw_id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        (stations, malformed)
    }
}
