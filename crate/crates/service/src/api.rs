use std::collections::HashSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDateTime;
use glucotwin_core::counterfactual::{
    calibrate, compute_outcome, overlay_counterfactual, rank_interventions, simulate_scenario_with,
    CalibrationOptions, CalibrationTarget, InterventionScenario, LabelledTrajectory, ResponseParams,
    ScenarioOutcome, Trajectory, UtilityWeights,
};
use glucotwin_core::eval::{BenchmarkConfig, BenchmarkModel};
use glucotwin_core::ingest::{resample, CgmSeries};
use glucotwin_core::twin::{validate_action, CausalGraph, FeasibleRanges};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::workspace::{DatasetKind, DatasetManifest, RunManifest, Workspace, REPORT_CSV_FILE, REPORT_JSON_FILE};

pub const API_PREFIX: &str = "/api/v1";
const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub graph: Arc<CausalGraph>,
    pub ranges: FeasibleRanges,
}

impl AppState {
    pub fn new(workspace: Workspace) -> Self {
        Self {
            workspace: Arc::new(workspace),
            graph: Arc::new(CausalGraph::default()),
            ranges: FeasibleRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetUpload {
    pub kind: DatasetKind,
    /// File contents as text.
    pub content: String,
    /// Original file name; the stem becomes the patient id of a CGM CSV.
    #[serde(default)]
    pub source_name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRequest {
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub dataset_id: String,
    /// Defaults to the four regression models.
    #[serde(default)]
    pub model_configs: Option<Vec<BenchmarkModel>>,
    #[serde(default)]
    pub split_spec: Option<SplitRequest>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub run_id: String,
    pub report_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    #[serde(default)]
    pub response_params: Option<ResponseParams>,
    #[serde(default)]
    pub calibration_targets: Option<Vec<CalibrationTarget>>,
    pub scenarios: Vec<InterventionScenario>,
    #[serde(default)]
    pub weights: Option<UtilityWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub params: ResponseParams,
    /// Present when the parameters came from calibration.
    pub calibration_residual: Option<f64>,
    /// In request order.
    pub trajectories: Vec<LabelledTrajectory>,
    /// In request order.
    pub outcomes: Vec<ScenarioOutcome>,
    /// Scenario labels, best first.
    pub ranking: Vec<String>,
}

fn default_before() -> f64 {
    60.0
}

fn default_after() -> f64 {
    180.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRequest {
    pub cgm_dataset_id: String,
    /// Defaults to the first series of the dataset.
    #[serde(default)]
    pub patient_id: Option<String>,
    pub anchor: NaiveDateTime,
    /// The first scenario is the baseline matching the observed curve.
    pub scenarios: Vec<InterventionScenario>,
    #[serde(default)]
    pub response_params: Option<ResponseParams>,
    #[serde(default = "default_before")]
    pub window_before_min: f64,
    #[serde(default = "default_after")]
    pub window_after_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayResponse {
    pub patient_id: String,
    pub anchor: NaiveDateTime,
    /// Observed glucose on the overlay grid (minutes relative to the anchor).
    pub observed: Trajectory,
    pub trajectories: Vec<LabelledTrajectory>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub format: Option<String>,
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

/// Routes under [`API_PREFIX`].
pub fn api_routes() -> Router<AppState> {
    Router::new()
        .route("/", get(health))
        .route("/health", get(health))
        .route("/datasets", post(upload_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/train", post(train))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/report", get(get_report))
        .route("/cgm/{id}/summary", get(cgm_summary))
        .route("/simulate", post(simulate))
        .route("/overlay", post(overlay))
        .route("/feasible-ranges", get(feasible_ranges))
        .route("/reference-scenarios", get(reference_scenarios))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .nest(API_PREFIX, api_routes())
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn upload_dataset(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<DatasetManifest>> {
    let req: DatasetUpload = parse_body(&body)?;
    let ws = st.workspace.clone();
    let manifest = blocking(move || {
        Ok(ws.add_dataset(req.kind, req.content.as_bytes(), req.source_name.as_deref())?)
    })
    .await?;
    Ok(Json(manifest))
}

async fn list_datasets(State(st): State<AppState>) -> ApiResult<Json<Vec<DatasetManifest>>> {
    Ok(Json(st.workspace.datasets()?))
}

async fn get_dataset(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DatasetManifest>> {
    Ok(Json(st.workspace.dataset(&id)?))
}

async fn train(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<TrainResponse>> {
    let req: TrainRequest = parse_body(&body)?;
    if req.seeds.is_empty() {
        return Err(ApiError::bad_request("seeds must not be empty"));
    }
    let mut config = BenchmarkConfig::regression_only();
    if let Some(models) = req.model_configs {
        if models.is_empty() {
            return Err(ApiError::bad_request("model_configs must not be empty"));
        }
        config.models = models;
    }
    if let Some(s) = req.split_spec {
        config.train_fraction = s.train_fraction;
    }
    // unknown dataset is a 404 before any work starts
    st.workspace.dataset(&req.dataset_id)?;
    let ws = st.workspace.clone();
    let run = blocking(move || Ok(ws.train(&req.dataset_id, &config, &req.seeds)?)).await?;
    Ok(Json(TrainResponse {
        report_url: format!("{API_PREFIX}/runs/{}/report", run.run_id),
        run_id: run.run_id,
    }))
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RunManifest>> {
    Ok(Json(st.workspace.run(&id)?))
}

async fn get_report(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    match q.format.as_deref() {
        None | Some("json") => Ok(json_bytes(st.workspace.report_bytes(&id, REPORT_JSON_FILE)?)),
        Some("csv") => Ok((
            [(header::CONTENT_TYPE, "text/csv")],
            st.workspace.report_bytes(&id, REPORT_CSV_FILE)?,
        )
            .into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

async fn cgm_summary(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_bytes(st.workspace.cgm_summary_bytes(&id)?))
}

async fn feasible_ranges(State(st): State<AppState>) -> Json<FeasibleRanges> {
    Json(st.ranges)
}

async fn reference_scenarios() -> Json<Vec<InterventionScenario>> {
    Json(InterventionScenario::reference_set())
}

/// Rejects empty lists and duplicate labels, then checks every action
/// against the causal graph and feasible ranges.
fn check_scenarios(st: &AppState, scenarios: &[InterventionScenario]) -> ApiResult<()> {
    if scenarios.is_empty() {
        return Err(ApiError::bad_request("at least one scenario is required"));
    }
    let mut seen = HashSet::new();
    for s in scenarios {
        if !seen.insert(s.label.as_str()) {
            return Err(ApiError::bad_request(format!("duplicate scenario label {:?}", s.label)));
        }
    }
    let violations: Vec<_> = scenarios
        .iter()
        .filter_map(|s| {
            validate_action(&st.graph, &s.action, &st.ranges)
                .err()
                .map(|v| (s.label.clone(), v))
        })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ApiError::violations(violations))
    }
}

/// Resolves the simulation parameters, calibrating when targets are given.
pub fn resolve_params(
    params: Option<ResponseParams>,
    targets: Option<Vec<CalibrationTarget>>,
) -> ApiResult<(ResponseParams, Option<f64>)> {
    match (params, targets) {
        (Some(_), Some(_)) => Err(ApiError::bad_request(
            "give either response_params or calibration_targets, not both",
        )),
        (Some(p), None) => {
            p.validate()?;
            Ok((p, None))
        }
        (None, Some(t)) => {
            let cal = calibrate(&t, &CalibrationOptions::default())?;
            Ok((cal.params, Some(cal.residual)))
        }
        (None, None) => Ok((ResponseParams::default(), None)),
    }
}

pub fn run_simulation(st: &AppState, req: SimulateRequest) -> ApiResult<SimulateResponse> {
    check_scenarios(st, &req.scenarios)?;
    let weights = req.weights.unwrap_or_default();
    weights.validate()?;
    let (params, residual) = resolve_params(req.response_params, req.calibration_targets)?;
    let mut trajectories = Vec::with_capacity(req.scenarios.len());
    let mut outcomes = Vec::with_capacity(req.scenarios.len());
    for s in &req.scenarios {
        let t = simulate_scenario_with(&params, s, &st.graph, &st.ranges)?;
        outcomes.push(compute_outcome(&t, &params, &weights, &s.label));
        trajectories.push(LabelledTrajectory {
            label: s.label.clone(),
            trajectory: t,
        });
    }
    let ranking = rank_interventions(&outcomes).into_iter().map(|o| o.label).collect();
    Ok(SimulateResponse {
        params,
        calibration_residual: residual,
        trajectories,
        outcomes,
        ranking,
    })
}

async fn simulate(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<SimulateResponse>> {
    let req: SimulateRequest = parse_body(&body)?;
    let resp = blocking(move || run_simulation(&st, req)).await?;
    Ok(Json(resp))
}

/// Picks the requested series, cuts the window around the anchor and puts
/// it on the 5-minute grid.
pub fn overlay_window(
    series: &[CgmSeries],
    patient_id: Option<&str>,
    anchor: NaiveDateTime,
    before_min: f64,
    after_min: f64,
) -> ApiResult<CgmSeries> {
    let s = match patient_id {
        Some(p) => series
            .iter()
            .find(|s| s.patient_id == p)
            .ok_or_else(|| ApiError::not_found(format!("patient {p:?} not in dataset")))?,
        None => series
            .first()
            .ok_or_else(|| ApiError::bad_request("dataset has no series"))?,
    };
    if !(before_min >= 0.0 && after_min >= 0.0 && before_min.is_finite() && after_min.is_finite()) {
        return Err(ApiError::bad_request("window bounds must be non-negative"));
    }
    let (Some(first), Some(last)) = (s.records.first(), s.records.last()) else {
        return Err(ApiError::bad_request("series is empty"));
    };
    if anchor < first.timestamp || anchor > last.timestamp {
        return Err(ApiError::bad_request(format!(
            "anchor {anchor} lies outside the window [{}, {}]",
            first.timestamp, last.timestamp
        )));
    }
    let lo = anchor - chrono::Duration::seconds((before_min * 60.0) as i64);
    let hi = anchor + chrono::Duration::seconds((after_min * 60.0) as i64);
    let cut = CgmSeries::new(
        s.patient_id.clone(),
        s.records
            .iter()
            .filter(|r| r.timestamp >= lo && r.timestamp <= hi)
            .cloned()
            .collect(),
    );
    Ok(resample(&cut, 5)?)
}

async fn overlay(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<OverlayResponse>> {
    let req: OverlayRequest = parse_body(&body)?;
    check_scenarios(&st, &req.scenarios)?;
    let params = req.response_params.unwrap_or_default();
    let ws = st.workspace.clone();
    let resp = blocking(move || {
        let series = ws.load_cgm(&req.cgm_dataset_id)?;
        let window = overlay_window(
            &series,
            req.patient_id.as_deref(),
            req.anchor,
            req.window_before_min,
            req.window_after_min,
        )?;
        let trajectories = overlay_counterfactual(&window, req.anchor, &params, &req.scenarios)?;
        let observed = Trajectory {
            t_grid: trajectories[0].trajectory.t_grid.clone(),
            glucose: window.values().collect(),
        };
        Ok(OverlayResponse {
            patient_id: window.patient_id,
            anchor: req.anchor,
            observed,
            trajectories,
        })
    })
    .await?;
    Ok(Json(resp))
}
