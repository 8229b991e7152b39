//! Remote intent extractor speaking the plugin JSON contract.
//!
//! Request: `{"text": "..."}`.
//! Response: `{"intents": ["power", ...], "constraints": {"d_max_km"?: n, "p_max"?: n, "c_min_kw"?: n}}`.
//! `p_max` is a price per kWh. Anything outside this schema is rejected so the
//! caller falls back to the rule-based extractor.

use std::time::Duration;

use recombot_core::{
    ConstraintSet, Extraction, ExtractorError, IntentExtractor, PreferenceCategory, Price,
    PriceUnit,
};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PluginResponse {
    intents: Vec<String>,
    constraints: PluginConstraints,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PluginConstraints {
    d_max_km: Option<f64>,
    p_max: Option<f64>,
    c_min_kw: Option<f64>,
}

/// Validates a plugin response body against the contract.
pub fn parse_plugin_response(body: &str) -> Result<Extraction, ExtractorError> {
    let invalid = |m: String| ExtractorError::InvalidResponse(m);
    let resp: PluginResponse = serde_json::from_str(body).map_err(|e| invalid(e.to_string()))?;
    let intents = resp
        .intents
        .iter()
        .map(|s| {
            s.parse::<PreferenceCategory>()
                .map_err(|e| invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let max_price = resp
        .constraints
        .p_max
        .map(|p| Price::new(p, PriceUnit::PerKwh))
        .transpose()
        .map_err(|e| invalid(e.to_string()))?;
    let constraints = ConstraintSet {
        max_distance_km: resp.constraints.d_max_km,
        max_price,
        min_power_kw: resp.constraints.c_min_kw,
    };
    constraints.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(Extraction {
        intents,
        constraints,
    })
}

pub struct HttpIntentExtractor {
    url: String,
    agent: ureq::Agent,
}

impl HttpIntentExtractor {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpIntentExtractor {
            url: url.into(),
            agent,
        }
    }
}

impl IntentExtractor for HttpIntentExtractor {
    fn extract(&self, text: &str) -> Result<Extraction, ExtractorError> {
        let body = serde_json::json!({ "text": text }).to_string();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| ExtractorError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ExtractorError::Unavailable(format!("HTTP {status}")));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ExtractorError::Unavailable(e.to_string()))?;
        parse_plugin_response(&body)
    }
}
