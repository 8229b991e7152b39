//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or general failure, 2 usage error,
//! 3 no feasible station, 4 station source failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use recombot_core::{
    normalize, CategoryMap, GeoPoint, PreferenceCategory, RankedRecommendation, WeightVector,
};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::fixture::{Fixture, FixtureError};
use crate::gateway::{GatewayError, StationSource};
use crate::pipeline::{Pipeline, PipelineError, QueryOutcome};
use crate::service::{router, AppState};
use crate::session::{FeedbackRequest, HistoryEntry, SessionStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_FEASIBLE: i32 = 3;
pub const EXIT_SOURCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "recombot", version, about = "EV charging station recommender")]
pub struct Cli {
    /// TOML settings file; environment variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank stations for a free-text request.
    Query(QueryArgs),
    /// Apply a script of queries and feedback to a session log.
    FeedbackSim(FeedbackSimArgs),
    /// Check every record of a fixture file.
    ValidateFixture(ValidateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Fixture file, or the name of a bundled fixture such as `kamloops`.
    #[arg(long, value_name = "PATH|NAME", conflicts_with = "live")]
    pub fixture: Option<String>,
    /// Query Open Charge Map (needs OCM_API_KEY).
    #[arg(long)]
    pub live: bool,
}

#[derive(Debug, Args)]
pub struct OriginArgs {
    /// Defaults to the fixture's origin.
    #[arg(long, requires = "lon", allow_negative_numbers = true)]
    pub lat: Option<f64>,
    #[arg(long, requires = "lat", allow_negative_numbers = true)]
    pub lon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub text: String,
    #[command(flatten)]
    pub origin: OriginArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub radius_km: Option<f64>,
    /// Explicit raw weights, e.g. `power=0.5,distance=0.5`; normalized and
    /// used as-is instead of the request's intents.
    #[arg(long, value_name = "CAT=W,...")]
    pub weights: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FeedbackSimArgs {
    /// Session event log; created if absent.
    #[arg(long, value_name = "FILE")]
    pub session: PathBuf,
    /// JSON lines, each `{"query": ...}` or `{"action": ..., "category"?, "station_id"?}`.
    #[arg(long, value_name = "FILE")]
    pub script: PathBuf,
    /// Session to drive; defaults to the newest in the log, or a new one.
    #[arg(long)]
    pub session_id: Option<String>,
    #[command(flatten)]
    pub origin: OriginArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub path: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Session event log.
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::NoFeasibleStation(_) => EXIT_NO_FEASIBLE,
            PipelineError::Gateway(GatewayError::InvalidRadius(_)) => EXIT_FAILURE,
            PipelineError::Gateway(GatewayError::Fixture(FixtureError::Syntax(_))) => EXIT_FAILURE,
            PipelineError::Gateway(_) | PipelineError::NoSource => EXIT_SOURCE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        PipelineError::Gateway(e.into()).into()
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` and runs the command, writing to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let result = Config::load(cli.config.as_deref())
        .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))
        .and_then(|config| match cli.command {
            Command::Query(a) => cmd_query(config, a, out),
            Command::FeedbackSim(a) => cmd_feedback_sim(config, a, out),
            Command::ValidateFixture(a) => cmd_validate(a, out, err),
            Command::Serve(a) => cmd_serve(config, a, err),
        });
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn apply_source(config: &mut Config, source: &SourceArgs) {
    if let Some(f) = &source.fixture {
        config.fixture = Some(f.clone());
    } else if source.live {
        config.fixture = None;
    }
}

fn build_pipeline(config: &Config) -> Result<Pipeline, Failure> {
    Pipeline::from_config(config).map_err(|e| match e {
        PipelineError::NoSource => Failure::new(EXIT_USAGE, e.to_string()),
        e => e.into(),
    })
}

fn resolve_origin(args: &OriginArgs, source: &StationSource) -> Result<GeoPoint, Failure> {
    if let (Some(lat), Some(lon)) = (args.lat, args.lon) {
        return GeoPoint::new(lat, lon).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()));
    }
    match source {
        StationSource::Fixture(spec) => Fixture::load(spec)?
            .origin
            .ok_or_else(|| Failure::new(EXIT_USAGE, "fixture has no origin; pass --lat and --lon")),
        StationSource::Live(_) => Err(Failure::new(
            EXIT_USAGE,
            "--lat and --lon are required with --live",
        )),
    }
}

/// Parses `power=0.5,distance=0.5` into normalized weights.
pub fn parse_weights(text: &str) -> Result<WeightVector, String> {
    let mut raw = CategoryMap([0.0; 4]);
    let mut seen = [false; 4];
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected CATEGORY=WEIGHT, got `{part}`"))?;
        let category: PreferenceCategory = name.trim().parse().map_err(|e| format!("{e}"))?;
        if std::mem::replace(&mut seen[category.index()], true) {
            return Err(format!("{category:?} given twice"));
        }
        raw[category] = value
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("weight `{}` is not a number", value.trim()))?;
    }
    normalize(&raw).map_err(|e| e.to_string())
}

fn format_weights(w: &WeightVector) -> String {
    w.iter()
        .map(|(c, v)| format!("{}={v:.4}", c.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_table(recs: &[RankedRecommendation], out: &mut dyn Write) -> std::io::Result<()> {
    let name_width = recs
        .iter()
        .map(|r| r.station.name.chars().count())
        .max()
        .unwrap_or(0)
        .max(4);
    writeln!(
        out,
        "{:>4}  {:<name_width$}  {:>9}  {:>11}  {:>6}  {:>9}  {:>6}",
        "rank", "name", "power", "price", "rating", "distance", "score"
    )?;
    for r in recs {
        let s = &r.station;
        let price = s.price.map_or_else(|| "n/a".to_string(), |p| p.to_string());
        let rating = s
            .rating
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}"));
        writeln!(
            out,
            "{:>4}  {:<name_width$}  {:>6.1} kW  {:>11}  {:>6}  {:>6.2} km  {:>6.4}",
            r.rank, s.name, s.power_kw, price, rating, s.distance_km, r.score
        )?;
    }
    for r in recs {
        writeln!(out, "  {}. {}", r.rank, r.rationale)?;
    }
    Ok(())
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, e.to_string())
}

fn cmd_query(mut config: Config, args: QueryArgs, out: &mut dyn Write) -> CmdResult {
    apply_source(&mut config, &args.source);
    let explicit = args
        .weights
        .as_deref()
        .map(parse_weights)
        .transpose()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("--weights: {e}")))?;
    let pipeline = build_pipeline(&config)?;
    let origin = resolve_origin(&args.origin, pipeline.source())?;
    let outcome = match explicit {
        // A fresh session has uniform weights, so this matches the service.
        None => pipeline.recommend(
            origin,
            &args.text,
            &WeightVector::uniform(),
            args.k,
            args.radius_km,
        )?,
        Some(weights) => {
            let (query, fell_back) = pipeline.extract(&args.text);
            let k = args.k.unwrap_or(pipeline.settings().k);
            let radius = args.radius_km.unwrap_or(pipeline.settings().radius_km);
            let (recommendations, notes) =
                pipeline.rank_query(origin, &query, &weights, k, radius)?;
            QueryOutcome {
                query,
                effective_weights: weights,
                recommendations,
                degraded: fell_back,
                notes,
            }
        }
    };
    if args.json {
        let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
        writeln!(out, "{text}").map_err(io_failure)?;
    } else {
        writeln!(
            out,
            "weights: {}",
            format_weights(&outcome.effective_weights)
        )
        .map_err(io_failure)?;
        for note in &outcome.notes {
            writeln!(out, "note: {note}").map_err(io_failure)?;
        }
        render_table(&outcome.recommendations, out).map_err(io_failure)?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct Verdict {
    index: usize,
    id: Option<String>,
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

fn cmd_validate(args: ValidateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let fixture = Fixture::from_path(&args.path)?;
    let verdicts: Vec<Verdict> = fixture
        .records
        .iter()
        .map(|slot| {
            let checked = slot.checked();
            Verdict {
                index: slot.index,
                id: slot.raw_id.clone(),
                valid: checked.is_ok(),
                reason: checked.err().map(|e| e.to_string()),
            }
        })
        .collect();
    let invalid = verdicts.iter().filter(|v| !v.valid).count();
    if verdicts.is_empty() {
        writeln!(err, "warning: 0 records in {}", args.path.display()).map_err(io_failure)?;
    }
    if args.json {
        let report = serde_json::json!({
            "path": args.path.display().to_string(),
            "records": verdicts,
            "total": verdicts.len(),
            "invalid": invalid,
        });
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        )
        .map_err(io_failure)?;
    } else {
        for v in &verdicts {
            let id = v.id.as_deref().unwrap_or("?");
            match &v.reason {
                None => writeln!(out, "record {} ({id}): ok", v.index),
                Some(r) => writeln!(out, "record {} ({id}): INVALID: {r}", v.index),
            }
            .map_err(io_failure)?;
        }
        writeln!(out, "{} records, {invalid} invalid", verdicts.len()).map_err(io_failure)?;
    }
    Ok(if invalid == 0 { EXIT_OK } else { EXIT_FAILURE })
}

/// One line of a feedback-sim script.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Query {
        query: String,
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        radius_km: Option<f64>,
    },
    Feedback(FeedbackRequest),
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|_| format!("script line {}: not a query or feedback step", i + 1))
        })
        .collect()
}

#[derive(Serialize)]
struct StepReport {
    step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    query: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feedback: Option<FeedbackRequest>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    results: Vec<String>,
    weights: WeightVector,
    reset: bool,
}

fn cmd_feedback_sim(mut config: Config, args: FeedbackSimArgs, out: &mut dyn Write) -> CmdResult {
    apply_source(&mut config, &args.source);
    let script_text = std::fs::read_to_string(&args.script)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", args.script.display())))?;
    let steps = parse_script(&script_text).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let pipeline = build_pipeline(&config)?;
    let store =
        SessionStore::open(&args.session).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let id = match (&args.session_id, store.ids().last()) {
        (Some(id), _) if store.get(id).is_some() => id.clone(),
        (Some(id), _) => {
            let origin = resolve_origin(&args.origin, pipeline.source())?;
            store
                .create_with_id(id.clone(), origin)
                .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?
                .id
        }
        (None, Some(last)) => last.clone(),
        (None, None) => {
            let origin = resolve_origin(&args.origin, pipeline.source())?;
            store
                .create(origin)
                .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?
                .id
        }
    };
    let existing = store.snapshot(&id).expect("session exists");
    pipeline.replay(&existing)?;
    if !args.json {
        writeln!(
            out,
            "session {id}: {} existing entries verified by replay",
            existing.history.len()
        )
        .map_err(io_failure)?;
    }

    let mut reports = Vec::with_capacity(steps.len());
    for (i, step) in steps.into_iter().enumerate() {
        let report = match step {
            ScriptStep::Query {
                query,
                k,
                radius_km,
            } => {
                let outcome = pipeline.handle_query(&store, &id, &query, k, radius_km)?;
                StepReport {
                    step: i + 1,
                    results: outcome
                        .recommendations
                        .iter()
                        .map(|r| r.station.id.clone())
                        .collect(),
                    query: Some(query),
                    feedback: None,
                    weights: store.snapshot(&id).expect("session exists").weights,
                    reset: false,
                }
            }
            ScriptStep::Feedback(request) => {
                let outcome = pipeline.handle_feedback(&store, &id, request.clone())?;
                StepReport {
                    step: i + 1,
                    query: None,
                    feedback: Some(request),
                    results: Vec::new(),
                    weights: outcome.weights,
                    reset: outcome.reset,
                }
            }
        };
        if !args.json {
            let what = match (&report.query, &report.feedback) {
                (Some(q), _) => format!("query {q:?} -> {}", report.results.join(", ")),
                (_, Some(f)) => {
                    let target = f
                        .category
                        .as_deref()
                        .or(f.station_id.as_deref())
                        .unwrap_or("");
                    format!("{} {target}", f.action)
                }
                _ => unreachable!(),
            };
            let reset = if report.reset {
                " (reset to uniform)"
            } else {
                ""
            };
            writeln!(
                out,
                "{:>3}. {what}\n     weights {}{reset}",
                report.step,
                format_weights(&report.weights)
            )
            .map_err(io_failure)?;
        }
        reports.push(report);
    }

    let session = store.snapshot(&id).expect("session exists");
    if args.json {
        let doc = serde_json::json!({
            "session_id": id,
            "steps": reports,
            "weights": session.weights,
            "entries": session.history.len(),
        });
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&doc).expect("report serializes")
        )
        .map_err(io_failure)?;
    } else {
        let queries = session
            .history
            .iter()
            .filter(|e| matches!(e, HistoryEntry::Query(_)))
            .count();
        writeln!(
            out,
            "final weights {} ({} entries, {queries} queries) in {}",
            format_weights(&session.weights),
            session.history.len(),
            args.session.display()
        )
        .map_err(io_failure)?;
    }
    Ok(EXIT_OK)
}

fn cmd_serve(mut config: Config, args: ServeArgs, err: &mut dyn Write) -> CmdResult {
    apply_source(&mut config, &args.source);
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    if let Some(store) = args.store {
        config.store_path = store;
    }
    let pipeline = build_pipeline(&config)?;
    let store = open_store(&config.store_path)?;
    let state = Arc::new(AppState { pipeline, store });
    let runtime = tokio::runtime::Runtime::new().map_err(io_failure)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("binding {}: {e}", config.listen)))?;
        let addr = listener.local_addr().map_err(io_failure)?;
        let _ = writeln!(err, "listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(io_failure)?;
        Ok(EXIT_OK)
    })
}

fn open_store(path: &Path) -> Result<SessionStore, Failure> {
    SessionStore::open(path).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = std::iter::once("recombot").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn weights_flag() {
        let w = parse_weights("power=1, distance=1").unwrap();
        assert_eq!(w.get(PreferenceCategory::Power), 0.5);
        assert_eq!(w.get(PreferenceCategory::Distance), 0.5);
        assert!(parse_weights("speed=1").is_err());
        assert!(parse_weights("power=1,power=2").is_err());
        assert!(parse_weights("power=0").is_err());
        assert!(parse_weights("power").is_err());
    }

    #[test]
    fn script_lines() {
        let steps = parse_script(
            "# warm up\n{\"query\": \"cheap\"}\n\n{\"action\": \"thumbs_up\", \"category\": \"power\"}\n",
        )
        .unwrap();
        assert!(matches!(&steps[0], ScriptStep::Query { query, .. } if query == "cheap"));
        assert!(matches!(&steps[1], ScriptStep::Feedback(f) if f.action == "thumbs_up"));
        assert!(parse_script("{\"verb\": 1}").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&["query"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("validate-fixture"));
        let (code, _, err) = run_args(&[
            "query",
            "x",
            "--fixture",
            "kamloops",
            "--weights",
            "speed=1",
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--weights"));
    }
}
