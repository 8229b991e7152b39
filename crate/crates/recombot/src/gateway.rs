//! Candidate station retrieval from a fixture or the live API.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use recombot_core::{GeoPoint, Station};

use crate::fixture::{Fixture, FixtureError, MalformedRecord};
use crate::ocm::OcmClient;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("search radius {0} km must be positive and finite")]
    InvalidRadius(f64),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("station source unavailable: {message}")]
    SourceUnavailable {
        message: String,
        retry_after: Option<Duration>,
    },
}

impl GatewayError {
    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            GatewayError::SourceUnavailable { retry_after, .. } => *retry_after,
            _ => None,
        }
    }
}

#[derive(Clone)]
pub enum StationSource {
    /// A fixture path, or the name of a bundled fixture.
    Fixture(String),
    Live(Arc<OcmClient>),
}

impl std::fmt::Debug for StationSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StationSource::Fixture(spec) => f.debug_tuple("Fixture").field(spec).finish(),
            StationSource::Live(_) => f.write_str("Live"),
        }
    }
}

/// Stations found around an origin, plus the records that had to be skipped.
#[derive(Debug, Clone, Default)]
pub struct Retrieval {
    pub stations: Vec<Station>,
    pub malformed: Vec<MalformedRecord>,
}

/// Every station within `radius_km` of `origin`, distances filled in.
pub fn fetch_stations(
    origin: GeoPoint,
    radius_km: f64,
    source: &StationSource,
) -> Result<Retrieval, GatewayError> {
    if !radius_km.is_finite() || radius_km <= 0.0 {
        return Err(GatewayError::InvalidRadius(radius_km));
    }
    let (stations, malformed) = match source {
        StationSource::Fixture(spec) => Fixture::load(spec)?.stations_within(origin, radius_km),
        StationSource::Live(client) => client.fetch(origin, radius_km)?,
    };
    if !malformed.is_empty() {
        log::warn!("{} malformed station records skipped", malformed.len());
    }
    Ok(Retrieval {
        stations,
        malformed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    lat: u64,
    lon: u64,
    radius: u64,
}

impl CacheKey {
    fn new(origin: GeoPoint, radius_km: f64) -> Self {
        CacheKey {
            lat: origin.lat().to_bits(),
            lon: origin.lon().to_bits(),
            radius: radius_km.to_bits(),
        }
    }
}

/// What the cache handed back.
#[derive(Debug, Clone)]
pub struct Cached {
    pub retrieval: Retrieval,
    /// Set when the source failed and an expired entry was served instead.
    pub stale: bool,
    pub error: Option<String>,
}

/// Read-mostly cache of retrievals keyed by (origin, radius).
#[derive(Debug)]
pub struct StationCache {
    ttl: Duration,
    entries: RwLock<HashMap<CacheKey, (Instant, Retrieval)>>,
}

impl StationCache {
    pub fn new(ttl: Duration) -> Self {
        StationCache {
            ttl,
            entries: RwLock::new(HashMap::new()),
        }
    }

    /// Serves a fresh entry, otherwise refetches. If the refetch fails with
    /// `SourceUnavailable` and an expired entry exists, that entry is served
    /// and marked stale.
    pub fn get_or_fetch(
        &self,
        origin: GeoPoint,
        radius_km: f64,
        fetch: impl FnOnce() -> Result<Retrieval, GatewayError>,
    ) -> Result<Cached, GatewayError> {
        let key = CacheKey::new(origin, radius_km);
        let now = Instant::now();
        if let Some((at, retrieval)) = self.entries.read().get(&key) {
            if now.duration_since(*at) < self.ttl {
                return Ok(Cached {
                    retrieval: retrieval.clone(),
                    stale: false,
                    error: None,
                });
            }
        }
        match fetch() {
            Ok(retrieval) => {
                self.entries.write().insert(key, (now, retrieval.clone()));
                Ok(Cached {
                    retrieval,
                    stale: false,
                    error: None,
                })
            }
            Err(err @ GatewayError::SourceUnavailable { .. }) => {
                match self.entries.read().get(&key) {
                    Some((_, retrieval)) => Ok(Cached {
                        retrieval: retrieval.clone(),
                        stale: true,
                        error: Some(err.to_string()),
                    }),
                    None => Err(err),
                }
            }
            Err(err) => Err(err),
        }
    }
}
