//! The request path shared by the service and the CLI: extract, blend,
//! retrieve, rank, and record.

use std::sync::Arc;
use std::time::Duration;

use recombot_core::{
    apply_feedback, extract_intents, extract_with_fallback, feedback_from_ui_action, normalize,
    rank, weights_from_intents, CategoryMap, ConstraintSet, FeedbackError, FeedbackOutcome,
    GeoPoint, IntentExtractor, LearningRate, Query, RankedRecommendation, RankingError,
    RuleBasedExtractor, UiAction, WeightVector,
};
use serde::Serialize;

use crate::config::Config;
use crate::extractor::HttpIntentExtractor;
use crate::gateway::{fetch_stations, GatewayError, Retrieval, StationCache, StationSource};
use crate::ocm::OcmClient;
use crate::session::{
    digest_results, same_bits, FeedbackRecord, FeedbackRequest, HistoryEntry, QueryRecord,
    ResultRef, Session, SessionStore, StoreError,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no feasible station: {0}")]
    NoFeasibleStation(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("replay diverged at history entry {entry}: {what}")]
    ReplayMismatch { entry: usize, what: String },
    #[error("no station source configured: set a fixture or OCM_API_KEY")]
    NoSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub eta: LearningRate,
    pub blend_query: f64,
    pub blend_session: f64,
    pub radius_km: f64,
    pub k: usize,
    pub cache_ttl: Duration,
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from(&Config::default())
    }
}

impl From<&Config> for Settings {
    fn from(c: &Config) -> Self {
        Settings {
            eta: LearningRate::new(c.eta).unwrap_or(LearningRate::DEFAULT),
            blend_query: c.blend_query,
            blend_session: c.blend_session,
            radius_km: c.radius_km,
            k: c.k,
            cache_ttl: Duration::from_secs(c.cache_ttl_secs),
        }
    }
}

/// Result of one recommendation request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub query: Query,
    pub effective_weights: WeightVector,
    pub recommendations: Vec<RankedRecommendation>,
    /// Set when the rule-based fallback parsed the request or stale stations
    /// were served.
    pub degraded: bool,
    pub notes: Vec<String>,
}

pub struct Pipeline {
    source: StationSource,
    cache: StationCache,
    extractor: Option<Arc<dyn IntentExtractor>>,
    rules: RuleBasedExtractor,
    settings: Settings,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("source", &self.source)
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

/// The configured station source: a fixture wins over the live API.
pub fn source_from_config(config: &Config) -> Result<StationSource, PipelineError> {
    if let Some(spec) = &config.fixture {
        return Ok(StationSource::Fixture(spec.clone()));
    }
    match &config.ocm_api_key {
        Some(key) => Ok(StationSource::Live(Arc::new(
            OcmClient::new(key.clone()).base_url(config.ocm_base_url.clone()),
        ))),
        None => Err(PipelineError::NoSource),
    }
}

impl Pipeline {
    pub fn new(source: StationSource, settings: Settings) -> Self {
        Pipeline {
            source,
            cache: StationCache::new(settings.cache_ttl),
            extractor: None,
            rules: RuleBasedExtractor::default(),
            settings,
        }
    }

    pub fn from_config(config: &Config) -> Result<Self, PipelineError> {
        let mut pipeline = Pipeline::new(source_from_config(config)?, Settings::from(config));
        if let Some(url) = &config.extractor_url {
            pipeline = pipeline.with_extractor(Arc::new(HttpIntentExtractor::new(
                url.clone(),
                Duration::from_secs(5),
            )));
        }
        Ok(pipeline)
    }

    /// Uses `extractor` first, with keyword rules as the fallback.
    pub fn with_extractor(mut self, extractor: Arc<dyn IntentExtractor>) -> Self {
        self.extractor = Some(extractor);
        self
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn source(&self) -> &StationSource {
        &self.source
    }

    /// Parses `text`; the flag is set when the fallback was used.
    pub fn extract(&self, text: &str) -> (Query, bool) {
        match &self.extractor {
            Some(x) => extract_with_fallback(text, x.as_ref(), &self.rules),
            None => (
                extract_intents(text, &self.rules).expect("rule-based extraction is infallible"),
                false,
            ),
        }
    }

    /// Weights used for ranking a query.
    ///
    /// A request that names no category defers to the session weights.
    pub fn effective_weights(&self, query: &Query, session: &WeightVector) -> WeightVector {
        if query.intents.is_empty() {
            return *session;
        }
        let q = weights_from_intents(&query.intents);
        let (a, b) = (self.settings.blend_query, self.settings.blend_session);
        let mixed = CategoryMap::from_fn(|c| a * q.get(c) + b * session.get(c));
        normalize(&mixed).expect("blend of valid weight vectors is nondegenerate")
    }

    fn check_request(k: usize, radius_km: f64) -> Result<(), PipelineError> {
        if k == 0 {
            return Err(PipelineError::InvalidRequest("k must be at least 1".into()));
        }
        if !radius_km.is_finite() || radius_km <= 0.0 {
            return Err(PipelineError::InvalidRequest(format!(
                "radius_km {radius_km} must be positive"
            )));
        }
        Ok(())
    }

    /// Candidate stations around `origin`, through the cache.
    pub fn candidates(
        &self,
        origin: GeoPoint,
        radius_km: f64,
    ) -> Result<(Retrieval, Vec<String>), PipelineError> {
        let cached = self.cache.get_or_fetch(origin, radius_km, || {
            fetch_stations(origin, radius_km, &self.source)
        })?;
        let mut notes = Vec::new();
        if cached.stale {
            notes.push(format!(
                "station source unavailable, serving cached stations ({})",
                cached.error.unwrap_or_default()
            ));
        }
        if !cached.retrieval.malformed.is_empty() {
            notes.push(format!(
                "{} malformed station records skipped",
                cached.retrieval.malformed.len()
            ));
        }
        Ok((cached.retrieval, notes))
    }

    /// Ranks the stations around `origin` for an already parsed query.
    pub fn rank_query(
        &self,
        origin: GeoPoint,
        query: &Query,
        weights: &WeightVector,
        k: usize,
        radius_km: f64,
    ) -> Result<(Vec<RankedRecommendation>, Vec<String>), PipelineError> {
        Self::check_request(k, radius_km)?;
        let (retrieval, notes) = self.candidates(origin, radius_km)?;
        let recs = rank_retrieval(&retrieval, query, weights, k, radius_km)?;
        Ok((recs, notes))
    }

    /// Full request path for a query against the given session weights.
    pub fn recommend(
        &self,
        origin: GeoPoint,
        text: &str,
        session_weights: &WeightVector,
        k: Option<usize>,
        radius_km: Option<f64>,
    ) -> Result<QueryOutcome, PipelineError> {
        let k = k.unwrap_or(self.settings.k);
        let radius_km = radius_km.unwrap_or(self.settings.radius_km);
        Self::check_request(k, radius_km)?;
        let (query, fell_back) = self.extract(text);
        let effective_weights = self.effective_weights(&query, session_weights);
        let (recommendations, mut notes) =
            self.rank_query(origin, &query, &effective_weights, k, radius_km)?;
        if fell_back {
            notes.insert(0, "intent extractor unavailable, used keyword rules".into());
        }
        let degraded = fell_back || notes.iter().any(|n| n.starts_with("station source"));
        Ok(QueryOutcome {
            query,
            effective_weights,
            recommendations,
            degraded,
            notes,
        })
    }

    fn session(
        store: &SessionStore,
        id: &str,
    ) -> Result<Arc<parking_lot::Mutex<Session>>, PipelineError> {
        store
            .get(id)
            .ok_or_else(|| PipelineError::SessionNotFound(id.to_string()))
    }

    pub fn handle_query(
        &self,
        store: &SessionStore,
        session_id: &str,
        text: &str,
        k: Option<usize>,
        radius_km: Option<f64>,
    ) -> Result<QueryOutcome, PipelineError> {
        let handle = Self::session(store, session_id)?;
        let mut session = handle.lock();
        let k = k.unwrap_or(self.settings.k);
        let radius_km = radius_km.unwrap_or(self.settings.radius_km);
        let outcome = self.recommend(
            session.origin,
            text,
            &session.weights,
            Some(k),
            Some(radius_km),
        )?;
        let record = QueryRecord {
            query: outcome.query.clone(),
            degraded: outcome.degraded,
            k,
            radius_km,
            session_weights: session.weights,
            effective_weights: outcome.effective_weights,
            results: outcome
                .recommendations
                .iter()
                .map(|r| ResultRef {
                    station_id: r.station.id.clone(),
                    top_categories: r.top_categories,
                })
                .collect(),
            digest: digest_results(&outcome.recommendations),
            at_ms: store.now_ms(),
        };
        store.append(&mut session, HistoryEntry::Query(record))?;
        Ok(outcome)
    }

    pub fn handle_feedback(
        &self,
        store: &SessionStore,
        session_id: &str,
        request: FeedbackRequest,
    ) -> Result<FeedbackOutcome, PipelineError> {
        let handle = Self::session(store, session_id)?;
        let mut session = handle.lock();
        let action = parse_action(&request, &session)?;
        let at_ms = store.now_ms();
        let event = feedback_from_ui_action(&action, session_id, at_ms);
        let outcome = apply_feedback(&session.weights, &event, self.settings.eta);
        let record = FeedbackRecord {
            request,
            event,
            eta: self.settings.eta,
            weights_after: outcome.weights,
            reset: outcome.reset,
            at_ms,
        };
        store.append(&mut session, HistoryEntry::Feedback(record))?;
        Ok(outcome)
    }

    /// Re-derives every entry of `session` from its requests and checks the
    /// results against what was recorded. Returns the final weights.
    ///
    /// Stations are fetched fresh from the source, bypassing the cache.
    pub fn replay(&self, session: &Session) -> Result<WeightVector, PipelineError> {
        let mut replayed = Session::new(session.id.clone(), session.origin, session.created_ms);
        for (i, entry) in session.history.iter().enumerate() {
            let mismatch = |what: String| PipelineError::ReplayMismatch { entry: i, what };
            match entry {
                HistoryEntry::Query(q) => {
                    if !same_bits(&q.session_weights, &replayed.weights) {
                        return Err(mismatch("session weights".into()));
                    }
                    let effective = self.effective_weights(&q.query, &replayed.weights);
                    if !same_bits(&effective, &q.effective_weights) {
                        return Err(mismatch("effective weights".into()));
                    }
                    let retrieval = fetch_stations(session.origin, q.radius_km, &self.source)?;
                    let recs = rank_retrieval(&retrieval, &q.query, &effective, q.k, q.radius_km)?;
                    if digest_results(&recs) != q.digest {
                        return Err(mismatch("result list digest".into()));
                    }
                }
                HistoryEntry::Feedback(f) => {
                    let action = parse_action(&f.request, &replayed)?;
                    let event = feedback_from_ui_action(&action, &session.id, f.at_ms);
                    if event != f.event {
                        return Err(mismatch("feedback signals".into()));
                    }
                    let outcome = apply_feedback(&replayed.weights, &event, f.eta);
                    if !same_bits(&outcome.weights, &f.weights_after) {
                        return Err(mismatch("weights after feedback".into()));
                    }
                }
            }
            replayed.apply(entry.clone()).map_err(mismatch)?;
        }
        Ok(replayed.weights)
    }
}

fn parse_action(request: &FeedbackRequest, session: &Session) -> Result<UiAction, FeedbackError> {
    UiAction::parse(
        &request.action,
        request.category.as_deref(),
        request.station_id.as_deref(),
        |id| session.latest_rationale(id),
    )
}

fn rank_retrieval(
    retrieval: &Retrieval,
    query: &Query,
    weights: &WeightVector,
    k: usize,
    radius_km: f64,
) -> Result<Vec<RankedRecommendation>, PipelineError> {
    rank(&retrieval.stations, weights, &query.constraints, k).map_err(|e| match e {
        RankingError::EmptyCandidateSet if retrieval.stations.is_empty() => {
            PipelineError::NoFeasibleStation(format!("no station within {radius_km} km"))
        }
        RankingError::EmptyCandidateSet => PipelineError::NoFeasibleStation(format!(
            "{} stations found, none meets {}",
            retrieval.stations.len(),
            describe_constraints(&query.constraints)
        )),
        other => PipelineError::InvalidRequest(other.to_string()),
    })
}

fn describe_constraints(c: &ConstraintSet) -> String {
    let mut parts = Vec::new();
    if let Some(d) = c.max_distance_km {
        parts.push(format!("distance <= {d} km"));
    }
    if let Some(p) = c.max_price {
        parts.push(format!("price <= {p}"));
    }
    if let Some(kw) = c.min_power_kw {
        parts.push(format!("power >= {kw} kW"));
    }
    if parts.is_empty() {
        "the request".into()
    } else {
        parts.join(", ")
    }
}
