use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use recombot::gateway::StationSource;
use recombot::ocm::{HttpResponse, OcmClient, RateLimiter, Transport, TransportError};
use recombot::pipeline::{Pipeline, Settings};
use recombot::service::{router, AppState};
use recombot::session::SessionStore;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(source: StationSource) -> Arc<AppState> {
    Arc::new(AppState {
        pipeline: Pipeline::new(source, Settings::default()),
        store: SessionStore::in_memory(),
    })
}

fn app() -> (Router, Arc<AppState>) {
    let s = state(StationSource::Fixture("kamloops".into()));
    (router(s.clone()), s)
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Option<String>, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let retry_after = resp
        .headers()
        .get(header::RETRY_AFTER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, retry_after, value)
}

async fn new_session(app: &Router) -> String {
    let (status, _, body) = call(
        app,
        Method::POST,
        "/sessions",
        Some(json!({"lat": 50.640054, "lon": -120.378926})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

fn names(body: &Value) -> Vec<String> {
    body["recommendations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["station"]["name"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn query_feedback_and_snapshot() {
    let (app, _) = app();
    let id = new_session(&app).await;

    let (status, _, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "fast charging high rated"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        names(&body)[..2],
        [
            "Kamloops Supercharger",
            "Kamloops Canadian Tire - Electrify Canada"
        ]
    );
    let first = &body["recommendations"][0];
    assert_eq!(first["rank"], 1);
    assert!(first["rationale"]
        .as_str()
        .unwrap()
        .starts_with("Kamloops Supercharger: recommended for"));
    assert!(first["flags"].is_array());
    assert_eq!(body["degraded"], false);
    let before = body["effective_weights"].clone();

    let (status, _, fb) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/feedback"),
        Some(json!({"action": "thumbs_up", "category": "power"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(fb["weights"]["power"].as_f64().unwrap() > 0.25);
    assert_eq!(fb["reset"], false);

    let (_, _, again) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "fast charging high rated", "k": 2})),
    )
    .await;
    assert_ne!(again["effective_weights"], before);
    assert_eq!(again["recommendations"].as_array().unwrap().len(), 2);

    let (status, _, snap) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["id"], id.as_str());
    assert_eq!(snap["history"].as_array().unwrap().len(), 3);
    assert_eq!(snap["weights"], fb["weights"]);
}

#[tokio::test]
async fn new_session_at_null_island_is_uniform() {
    let (app, _) = app();
    let (status, _, body) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"lat": 0.0, "lon": 0.0})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap();
    let (_, _, snap) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    for c in ["distance", "price", "power", "rating"] {
        assert_eq!(snap["weights"][c], 0.25);
    }
    // Nothing near null island.
    let (status, _, err) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "cheap"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "no_feasible_station");
}

#[tokio::test]
async fn chose_station_uses_its_rationale() {
    let (app, _) = app();
    let id = new_session(&app).await;
    let (_, _, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "cheap high rating", "k": 3})),
    )
    .await;
    let top = &body["recommendations"][0];
    let station_id = top["station"]["id"].as_str().unwrap();
    let named: Vec<&str> = top["top_categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    let (status, _, fb) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/feedback"),
        Some(json!({"action": "chose_station", "station_id": station_id})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    for c in ["distance", "price", "power", "rating"] {
        let w = fb["weights"][c].as_f64().unwrap();
        if named.contains(&c) {
            assert!(w > 0.25, "{c} {w}");
        } else {
            assert!(w < 0.25, "{c} {w}");
        }
    }
}

#[tokio::test]
async fn error_responses() {
    let (app, _) = app();
    let id = new_session(&app).await;

    let (status, _, e) = call(
        &app,
        Method::POST,
        "/sessions/nope/query",
        Some(json!({"text": "cheap"})),
    )
    .await;
    assert_eq!(
        (status, e["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("session_not_found"))
    );
    assert_eq!(e["retriable"], false);
    let (status, _, _) = call(
        &app,
        Method::POST,
        "/sessions/nope/feedback",
        Some(json!({"action": "thumbs_up", "category": "power"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/feedback"),
        Some(json!({"action": "wave"})),
    )
    .await;
    assert_eq!(
        (status, e["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_action"))
    );
    let (status, _, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/feedback"),
        Some(json!({"action": "thumbs_up"})),
    )
    .await;
    assert_eq!(
        (status, e["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_request"))
    );
    let (status, _, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/feedback"),
        Some(json!({"action": "chose_station", "station_id": "ocm-nowhere"})),
    )
    .await;
    assert_eq!(
        (status, e["code"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_station"))
    );

    let (status, _, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"lat": 91.0, "lon": 0.0})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, e) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"latitude": 1.0})),
    )
    .await;
    assert_eq!(
        (status, e["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_request"))
    );
    let (status, _, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "cheap", "k": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "at least 500 kW"})),
    )
    .await;
    assert_eq!(
        (status, e["code"].as_str()),
        (
            StatusCode::UNPROCESSABLE_ENTITY,
            Some("no_feasible_station")
        )
    );

    let (_, _, snap) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert!(snap["history"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn stations_endpoint() {
    let (app, _) = app();
    let (status, _, body) = call(
        &app,
        Method::GET,
        "/stations?lat=50.640054&lon=-120.378926&radius_km=2",
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body["stations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 3);
    assert!(!ids.contains(&"ocm-aberdeen-mall"));
    let (status, _, _) = call(
        &app,
        Method::GET,
        "/stations?lat=50.6&lon=-120.3&radius_km=-1",
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, e) = call(&app, Method::GET, "/stations?lat=abc&lon=1", None).await;
    assert_eq!(
        (status, e["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_request"))
    );
}

struct Down;

impl Transport for Down {
    fn get(&self, _: &str, _: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 503,
            retry_after: Some(Duration::from_secs(30)),
            body: String::new(),
        })
    }
}

#[tokio::test]
async fn upstream_outage_is_retriable_503() {
    let client = OcmClient::with_transport("k", Box::new(Down))
        .rate_limiter(Arc::new(RateLimiter::new(1000.0)))
        .sleeper(|_| {});
    let app = router(state(StationSource::Live(Arc::new(client))));
    let id = new_session(&app).await;
    let (status, retry_after, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "cheap"})),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(e["code"], "source_unavailable");
    assert_eq!(e["retriable"], true);
    assert_eq!(retry_after.as_deref(), Some("30"));
}

#[tokio::test]
async fn missing_fixture_is_503() {
    let app = router(state(StationSource::Fixture("missing.file".into())));
    let id = new_session(&app).await;
    let (status, _, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/query"),
        Some(json!({"text": "cheap"})),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(e["message"].as_str().unwrap().contains("fixture not found"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_feedback_is_serialized_per_session() {
    let (app, st) = app();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    let mut tasks = Vec::new();
    for i in 0..40 {
        let app = app.clone();
        let (id, category) = if i % 2 == 0 {
            (a.clone(), "power")
        } else {
            (b.clone(), "price")
        };
        tasks.push(tokio::spawn(async move {
            call(
                &app,
                Method::POST,
                &format!("/sessions/{id}/feedback"),
                Some(json!({"action": "thumbs_up", "category": category})),
            )
            .await
            .0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let sa = st.store.snapshot(&a).unwrap();
    let sb = st.store.snapshot(&b).unwrap();
    assert_eq!(sa.history.len(), 20);
    assert_eq!(sb.history.len(), 20);
    // Each session saw only its own signal, applied one after another.
    assert!(sa.weights.get(recombot_core::PreferenceCategory::Power) > 0.8);
    assert!(sb.weights.get(recombot_core::PreferenceCategory::Price) > 0.8);
    assert_eq!(st.pipeline.replay(&sa).unwrap(), sa.weights);
    assert_eq!(st.pipeline.replay(&sb).unwrap(), sb.weights);
    let stamps: Vec<i64> = sa.history.iter().map(|e| e.at_ms()).collect();
    assert!(stamps.windows(2).all(|w| w[0] < w[1]));
}
