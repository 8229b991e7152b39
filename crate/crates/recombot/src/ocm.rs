//! Open Charge Map client.
//!
//! Requests go through a shared token bucket (2 requests/second by default)
//! and are retried up to three times with exponential backoff and jitter.
//! POI records map onto [`Station`] as follows:
//!
//! | Open Charge Map field                  | station field |
//! |----------------------------------------|---------------|
//! | `ID`                                   | `id` as `ocm-<ID>` |
//! | `AddressInfo.Title`                    | `name` |
//! | `AddressInfo.Latitude` / `Longitude`   | `location`, and `distance_km` via haversine from the origin |
//! | max of `Connections[].PowerKW`         | `power_kw` |
//! | `UsageCost`                            | `price` (unparsable text becomes a missing price) |
//! | mean of `UserComments[].Rating`        | `rating` (absent when nobody rated) |

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::Rng;
use recombot_core::{haversine, parse_price, GeoPoint, Station};
use serde_json::Value;

use crate::fixture::MalformedRecord;
use crate::gateway::GatewayError;

pub const DEFAULT_BASE_URL: &str = "https://api.openchargemap.io/v3";

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub retry_after: Option<Duration>,
    pub body: String,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Minimal HTTP GET used by the client; swapped out in tests.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
        let mut req = self.agent.get(url);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let mut resp = req.call().map_err(|e| TransportError(e.to_string()))?;
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse {
            status,
            retry_after,
            body,
        })
    }
}

/// Token bucket shared by every request a client makes.
#[derive(Debug)]
pub struct RateLimiter {
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    capacity: f64,
    tokens: f64,
    per_second: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let capacity = per_second.max(1.0);
        RateLimiter {
            state: Mutex::new(Bucket {
                capacity,
                tokens: capacity,
                per_second,
                last: Instant::now(),
            }),
        }
    }

    /// Takes a token at `now`, or says how long until one is available.
    pub fn try_acquire(&self, now: Instant) -> Result<(), Duration> {
        let mut b = self.state.lock();
        let elapsed = now.saturating_duration_since(b.last).as_secs_f64();
        b.tokens = (b.tokens + elapsed * b.per_second).min(b.capacity);
        b.last = now.max(b.last);
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - b.tokens) / b.per_second))
        }
    }

    pub fn acquire(&self, sleep: &dyn Fn(Duration)) {
        while let Err(wait) = self.try_acquire(Instant::now()) {
            sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `retry` (0-based): `base * 2^retry`
    /// plus up to half that again in jitter, capped at `max_delay`.
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << retry.min(16));
        let jitter = exp.mul_f64(rng.gen_range(0.0..0.5));
        (exp + jitter).min(self.max_delay)
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

pub struct OcmClient {
    base_url: String,
    api_key: String,
    transport: Box<dyn Transport>,
    limiter: Arc<RateLimiter>,
    retry: RetryPolicy,
    page_size: usize,
    max_results: usize,
    sleeper: Sleeper,
}

impl OcmClient {
    pub fn new(api_key: impl Into<String>) -> Self {
        OcmClient::with_transport(
            api_key,
            Box::new(UreqTransport::new(Duration::from_secs(10))),
        )
    }

    pub fn with_transport(api_key: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        OcmClient {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: api_key.into(),
            transport,
            limiter: Arc::new(RateLimiter::new(2.0)),
            retry: RetryPolicy::default(),
            page_size: 100,
            max_results: 800,
            sleeper: Box::new(std::thread::sleep),
        }
    }

    pub fn base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into().trim_end_matches('/').to_string();
        self
    }

    pub fn rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// First page size and the cap the page size may grow to.
    pub fn paging(mut self, page_size: usize, max_results: usize) -> Self {
        self.page_size = page_size.max(1);
        self.max_results = max_results.max(self.page_size);
        self
    }

    pub fn sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    fn url(&self, origin: GeoPoint, radius_km: f64, max_results: usize) -> String {
        format!(
            "{}/poi/?output=json&latitude={}&longitude={}&distance={}&distanceunit=km\
             &maxresults={}&includecomments=true&compact=true&verbose=false",
            self.base_url,
            origin.lat(),
            origin.lon(),
            radius_km,
            max_results
        )
    }

    fn get_with_retry(&self, url: &str) -> Result<String, GatewayError> {
        let mut rng = rand::thread_rng();
        let headers = [
            ("X-API-Key", self.api_key.as_str()),
            ("Accept", "application/json"),
        ];
        let mut last_err = String::new();
        let mut retry_after = None;
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                let backoff = self.retry.delay(attempt - 1, &mut rng);
                (self.sleeper)(retry_after.map_or(backoff, |ra: Duration| ra.max(backoff)));
            }
            self.limiter.acquire(&*self.sleeper);
            match self.transport.get(url, &headers) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp.body),
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last_err = format!("HTTP {}", resp.status);
                    retry_after = resp.retry_after;
                }
                Ok(resp) => {
                    return Err(GatewayError::SourceUnavailable {
                        message: format!("Open Charge Map returned HTTP {}", resp.status),
                        retry_after: None,
                    })
                }
                Err(e) => {
                    last_err = e.0;
                    retry_after = None;
                }
            }
        }
        Err(GatewayError::SourceUnavailable {
            message: format!(
                "Open Charge Map unreachable after {} attempts: {last_err}",
                self.retry.attempts
            ),
            retry_after: Some(retry_after.unwrap_or(self.retry.max_delay)),
        })
    }

    /// Stations within `radius_km` of `origin`.
    ///
    /// The API has no cursor, so a full page is refetched with a doubled
    /// `maxresults` until a short page arrives or the cap is reached.
    pub fn fetch(
        &self,
        origin: GeoPoint,
        radius_km: f64,
    ) -> Result<(Vec<Station>, Vec<MalformedRecord>), GatewayError> {
        let mut limit = self.page_size;
        let pois = loop {
            let body = self.get_with_retry(&self.url(origin, radius_km, limit))?;
            let pois: Vec<Value> =
                serde_json::from_str(&body).map_err(|e| GatewayError::SourceUnavailable {
                    message: format!("Open Charge Map sent malformed JSON: {e}"),
                    retry_after: None,
                })?;
            if pois.len() < limit || limit >= self.max_results {
                break pois;
            }
            limit = (limit * 2).min(self.max_results);
        };

        let mut seen = BTreeSet::new();
        let mut stations = Vec::new();
        let mut malformed = Vec::new();
        for (index, poi) in pois.iter().enumerate() {
            match map_poi(poi, origin) {
                Ok(s) => {
                    if s.distance_km <= radius_km && seen.insert(s.id.clone()) {
                        stations.push(s);
                    }
                }
                Err(reason) => {
                    log::warn!("skipping Open Charge Map record {index}: {reason}");
                    malformed.push(MalformedRecord {
                        index,
                        id: poi.get("ID").map(|v| format!("ocm-{v}")),
                        reason,
                    });
                }
            }
        }
        Ok((stations, malformed))
    }
}

/// Converts one POI object into a station.
pub fn map_poi(poi: &Value, origin: GeoPoint) -> Result<Station, String> {
    let id = poi
        .get("ID")
        .and_then(Value::as_u64)
        .ok_or("missing numeric ID")?;
    let address = poi.get("AddressInfo").ok_or("missing AddressInfo")?;
    let name = address
        .get("Title")
        .and_then(Value::as_str)
        .unwrap_or("Unnamed station")
        .to_string();
    let lat = address
        .get("Latitude")
        .and_then(Value::as_f64)
        .ok_or("missing latitude")?;
    let lon = address
        .get("Longitude")
        .and_then(Value::as_f64)
        .ok_or("missing longitude")?;
    let location = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;

    let power_kw = poi
        .get("Connections")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|c| c.get("PowerKW").and_then(Value::as_f64))
        .fold(f64::NAN, f64::max);

    let price = poi
        .get("UsageCost")
        .and_then(Value::as_str)
        .and_then(|t| parse_price(t).ok());

    let ratings: Vec<f64> = poi
        .get("UserComments")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|c| c.get("Rating").and_then(Value::as_f64))
        .filter(|r| (0.0..=5.0).contains(r))
        .collect();
    let rating = (!ratings.is_empty()).then(|| ratings.iter().sum::<f64>() / ratings.len() as f64);

    let station = Station {
        id: format!("ocm-{id}"),
        name,
        location: Some(location),
        power_kw,
        price,
        rating,
        distance_km: haversine(origin, location),
    };
    station.validate().map_err(|e| e.to_string())?;
    Ok(station)
}
