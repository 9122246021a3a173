//! Read-only HTTP JSON API over a model store and solve cache.
//!
//! Routes: `GET /players`, `GET /board`, `GET /skill/{player}/{region}`,
//! `POST /solve`, `GET /solve/{handle}`, `POST /analyze`. Request and
//! response bodies are described in `API.md`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use dartsolve_core::aimprob::{ActionSet, GridOptions};
use dartsolve_core::board::{Outcome, TargetRegion};
use dartsolve_core::cache::Cache;
use dartsolve_core::emfit::confidence_ellipse;
use dartsolve_core::session::{Session, SessionError, SolveSpec, Solved};
use dartsolve_core::store::{ModelStore, StoreError};
use dartsolve_core::zsg::{analyze_state, heatmap, match_table, turn_transition, GameState, NashConfig, Player, ZsgError, START_SCORE};

const DEFAULT_LEGS: [u32; 8] = [1, 3, 5, 7, 9, 11, 21, 35];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Running,
    Done,
    Failed(String),
}

struct Job {
    spec: SolveSpec,
    legs: Vec<u32>,
    status: JobStatus,
    result: Option<Arc<Solved>>,
    cached: bool,
}

#[derive(Clone)]
pub struct AppState {
    session: Arc<Session<'static>>,
    jobs: Arc<Mutex<HashMap<String, Job>>>,
}

impl AppState {
    /// The store lives for the rest of the process.
    pub fn new(store: ModelStore, cache: Option<Cache>) -> Self {
        let store: &'static ModelStore = Box::leak(Box::new(store));
        AppState {
            session: Arc::new(Session::new(store, cache)),
            jobs: Arc::default(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/players", get(players))
        .route("/board", get(board))
        .route("/skill/{player}/{region}", get(skill))
        .route("/solve", post(solve))
        .route("/solve/{handle}", get(solve_status))
        .route("/analyze", post(analyze))
        .with_state(state)
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn err(code: StatusCode, m: impl std::fmt::Display) -> ApiError {
    ApiError(code, m.to_string())
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match e {
            SessionError::Store(StoreError::UnknownPlayer(_)) | SessionError::Aim(_) | SessionError::MaxScore(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        err(code, e)
    }
}

impl From<ZsgError> for ApiError {
    fn from(e: ZsgError) -> Self {
        let code = match e {
            ZsgError::InvalidState(_) | ZsgError::Terminal | ZsgError::Unsolved(_) | ZsgError::EvenLegs(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        err(code, e)
    }
}

async fn players(State(st): State<AppState>) -> Json<Value> {
    let store = st.session.store;
    let out: Vec<Value> = store
        .players()
        .into_iter()
        .map(|p| {
            let regions: Vec<Value> = store
                .player_records(&p)
                .map(|r| {
                    json!({
                        "region": r.target,
                        "attempts": r.meta.attempts,
                        "coverage": r.meta.coverage,
                        "low_coverage": r.meta.low_coverage,
                    })
                })
                .collect();
            json!({ "player": p, "regions": regions })
        })
        .collect();
    Json(Value::Array(out))
}

async fn board(State(st): State<AppState>) -> Json<Value> {
    let b = &st.session.store.board;
    let centers: Vec<Value> = TargetRegion::all()
        .map(|t| json!({ "region": t, "center": b.region_center(t) }))
        .collect();
    Json(json!({ "spec": b, "centers": centers }))
}

async fn skill(State(st): State<AppState>, Path((player, region)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    let store = st.session.store;
    let target: TargetRegion = region
        .parse()
        .map_err(|_| err(StatusCode::NOT_FOUND, format!("unknown region {region}")))?;
    if !store.players().contains(&player) {
        return Err(err(StatusCode::NOT_FOUND, format!("unknown player {player}")));
    }
    let r = store
        .record(&player, target)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("no model for {player} at {target}")))?;
    let table: Vec<Value> = r
        .meta
        .outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| json!({ "outcome": o, "observed": r.meta.observed[k], "used": r.meta.fractions[k], "fitted": r.meta.fitted[k] }))
        .collect();
    Ok(Json(json!({
        "player": player,
        "region": target,
        "mode": r.mode,
        "mu": r.mu,
        "sigma": r.sigma,
        "log_likelihood": r.loglik,
        "ellipse_95": confidence_ellipse(&store.board, &r.skill(), 0.95),
        "low_coverage": r.meta.low_coverage,
        "source": r.meta.source,
        "mean_abs_error": r.meta.mean_abs_error,
        "outcomes": table,
    })))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SolveRequest {
    pub player_a: String,
    pub player_b: String,
    #[serde(default = "single")]
    pub actions_a: ActionSet,
    #[serde(default = "single")]
    pub actions_b: ActionSet,
    #[serde(default)]
    pub legs: Option<Vec<u32>>,
    #[serde(default)]
    pub max_score: Option<u32>,
    #[serde(default)]
    pub lattice: Option<u32>,
}

fn single() -> ActionSet {
    ActionSet::Single
}

fn handle_of(store_hash: &str, spec: &SolveSpec) -> String {
    let s = serde_json::to_vec(&(store_hash, spec)).expect("spec serializes");
    Sha256::digest(&s).iter().take(12).map(|b| format!("{b:02x}")).collect()
}

fn job_json(handle: &str, job: &Job) -> Result<Value, ApiError> {
    let mut v = json!({ "handle": handle, "playerA": job.spec.player_a, "playerB": job.spec.player_b, "cached": job.cached });
    match &job.status {
        JobStatus::Running => v["status"] = json!("running"),
        JobStatus::Failed(m) => {
            v["status"] = json!("failed");
            v["error"] = json!(m);
        }
        JobStatus::Done => {
            let s = job.result.as_ref().expect("done jobs hold a result");
            let (pa, pb) = (s.nash.p_a_star(), s.nash.p_b_star());
            let rows = match_table(pa, pb, &job.legs)?;
            v["status"] = json!("done");
            v["p_a_star"] = json!(pa);
            v["p_b_star"] = json!(pb);
            v["rounds"] = json!(s.nash.rounds);
            v["matches"] = json!(rows);
        }
    }
    Ok(v)
}

async fn solve(State(st): State<AppState>, Json(req): Json<SolveRequest>) -> Result<Response, ApiError> {
    let unprocessable = |m: String| err(StatusCode::UNPROCESSABLE_ENTITY, m);
    let store = st.session.store;
    let known = store.players();
    for p in [&req.player_a, &req.player_b] {
        if !known.contains(p) {
            return Err(unprocessable(format!("unknown player {p}")));
        }
    }
    let legs = req.legs.clone().unwrap_or_else(|| DEFAULT_LEGS.to_vec());
    if let Some(n) = legs.iter().find(|&&n| n % 2 == 0) {
        return Err(unprocessable(format!("number of legs must be odd, got {n}")));
    }
    let max = req.max_score.unwrap_or(START_SCORE);
    if !(2..=START_SCORE).contains(&max) {
        return Err(unprocessable(format!("maxScore must be in 2..=501, got {max}")));
    }
    let lattice = req.lattice.unwrap_or(1);
    if lattice == 0 {
        return Err(unprocessable("lattice must be at least 1".into()));
    }
    let mut spec = SolveSpec::new(&req.player_a, &req.player_b, [req.actions_a, req.actions_b]);
    spec.max = [max; 2];
    spec.grid = GridOptions {
        lattice_mm: lattice,
        ..GridOptions::default()
    };
    spec.nash = NashConfig::default();
    let handle = handle_of(&store.hash(), &spec);

    {
        let mut jobs = st.jobs.lock().unwrap();
        if let Some(job) = jobs.get_mut(&handle) {
            return match job.status {
                JobStatus::Running => Err(err(StatusCode::CONFLICT, format!("solve {handle} is already running"))),
                JobStatus::Done => {
                    job.cached = true;
                    job.legs = legs;
                    Ok((StatusCode::OK, Json(job_json(&handle, job)?)).into_response())
                }
                JobStatus::Failed(_) => {
                    job.status = JobStatus::Running;
                    job.legs = legs;
                    spawn(st.clone(), handle.clone());
                    Ok((StatusCode::ACCEPTED, Json(job_json(&handle, job)?)).into_response())
                }
            };
        }
        let job = Job {
            spec,
            legs,
            status: JobStatus::Running,
            result: None,
            cached: false,
        };
        let body = job_json(&handle, &job)?;
        jobs.insert(handle.clone(), job);
        spawn(st.clone(), handle);
        Ok((StatusCode::ACCEPTED, Json(body)).into_response())
    }
}

fn spawn(st: AppState, handle: String) {
    tokio::task::spawn_blocking(move || {
        let spec = st.jobs.lock().unwrap()[&handle].spec.clone();
        let res = st.session.solve(&spec);
        let mut jobs = st.jobs.lock().unwrap();
        let job = jobs.get_mut(&handle).expect("jobs are never removed");
        match res {
            Ok(s) => {
                job.cached = s.cached;
                job.result = Some(Arc::new(s));
                job.status = JobStatus::Done;
            }
            Err(e) => {
                log::warn!("solve {handle} failed: {e}");
                job.status = JobStatus::Failed(e.to_string());
            }
        }
    });
}

async fn solve_status(State(st): State<AppState>, Path(handle): Path<String>) -> Result<Json<Value>, ApiError> {
    let jobs = st.jobs.lock().unwrap();
    let job = jobs
        .get(&handle)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("unknown handle {handle}")))?;
    Ok(Json(job_json(&handle, job)?))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnalyzeRequest {
    pub handle: String,
    /// `sA,sB,t,i,u` or the state object.
    pub state: StateInput,
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Heat-map aim spacing, whole mm; 0 skips the heat-map.
    #[serde(default)]
    pub heat_lattice: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StateInput {
    Text(String),
    Object(GameState),
}

async fn analyze(State(st): State<AppState>, Json(req): Json<AnalyzeRequest>) -> Result<Json<Value>, ApiError> {
    let state = match &req.state {
        StateInput::Text(s) => s.parse::<GameState>()?,
        StateInput::Object(g) => {
            g.validate()?;
            *g
        }
    };
    if state.is_terminal() {
        return Err(err(StatusCode::UNPROCESSABLE_ENTITY, format!("state {state} is terminal")));
    }
    let (solved, spec) = {
        let jobs = st.jobs.lock().unwrap();
        let job = jobs
            .get(&req.handle)
            .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("unknown handle {}", req.handle)))?;
        match (&job.status, &job.result) {
            (JobStatus::Done, Some(s)) => (s.clone(), job.spec.clone()),
            (JobStatus::Failed(m), _) => return Err(err(StatusCode::UNPROCESSABLE_ENTITY, format!("solve failed: {m}"))),
            _ => return Err(err(StatusCode::CONFLICT, format!("solve {} is still running", req.handle))),
        }
    };
    let top_k = req.top_k.unwrap_or(5);
    let lattice = req.heat_lattice.unwrap_or(4);
    let session = st.session.clone();
    let out = tokio::task::spawn_blocking(move || -> Result<Value, ApiError> {
        let game = solved.game();
        let a = analyze_state(&game, &solved.nash.solution, &state, top_k)?;
        let next: Vec<Value> = Outcome::all()
            .map(|o| Ok(json!({ "outcome": o, "next": turn_transition(&state, o)? })))
            .collect::<Result<_, ZsgError>>()?;
        let heat = if lattice == 0 {
            Value::Null
        } else {
            let who = match state.thrower {
                Player::A => &spec.player_a,
                Player::B => &spec.player_b,
            };
            let (grid, _) = session.grid(
                who,
                ActionSet::Multi,
                &GridOptions {
                    lattice_mm: lattice,
                    ..GridOptions::default()
                },
            )?;
            json!(heatmap(&game, &solved.nash.solution, &state, &grid)?)
        };
        Ok(json!({ "analysis": a, "next_states": next, "heatmap": heat }))
    })
    .await
    .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e))??;
    Ok(Json(out))
}
