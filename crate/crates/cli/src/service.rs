use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use riskxai::insight::cohort_summary;
use riskxai::{
    explain_lime, explain_shap, find_counterfactuals, whatif_predict, CardConfig, CfConfig, Direction, Error,
    LimeConfig, RecordInput, ShapConfig, ShapMode, SimilarityCriteria, WhatIfRequest,
};

use crate::envelope::ApiError;
use crate::snapshot::Snapshot;

pub const FINGERPRINT_HEADER: &str = "x-model-fingerprint";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Concurrent LIME, counterfactual, similarity and card jobs.
    pub workers: usize,
    pub card: CardConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: std::thread::available_parallelism().map_or(2, |n| n.get()),
            card: CardConfig::default(),
        }
    }
}

pub struct App {
    current: RwLock<Arc<Snapshot>>,
    workers: Semaphore,
    config: ServiceConfig,
}

impl App {
    pub fn new(snapshot: Snapshot, config: ServiceConfig) -> Arc<Self> {
        Arc::new(App {
            current: RwLock::new(Arc::new(snapshot)),
            workers: Semaphore::new(config.workers.max(1)),
            config,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock").clone()
    }

    fn swap(&self, next: Snapshot) {
        *self.current.write().expect("snapshot lock") = Arc::new(next);
    }
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/model-card", get(model_card))
        .route("/model-card.html", get(model_card_html))
        .route("/predict", post(predict))
        .route("/explain/lime", post(lime))
        .route("/explain/shap", post(shap))
        .route("/counterfactual", post(counterfactual))
        .route("/whatif", post(whatif))
        .route("/similar", post(similar))
        .route("/admin/reload", post(reload))
        .with_state(app)
}

pub async fn serve(app: Arc<App>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}

fn with_fingerprint(mut response: Response, fingerprint: &str) -> Response {
    if let Ok(v) = HeaderValue::from_str(fingerprint) {
        response.headers_mut().insert(FINGERPRINT_HEADER, v);
    }
    response
}

fn ok<T: Serialize>(snap: &Snapshot, result: T) -> Response {
    let body = json!({ "model_fingerprint": snap.fingerprint, "result": result });
    with_fingerprint(Json(body).into_response(), &snap.fingerprint)
}

fn fail(snap: &Snapshot, e: ApiError) -> Response {
    let body = json!({ "model_fingerprint": snap.fingerprint, "error": e.body });
    with_fingerprint((e.status, Json(body)).into_response(), &snap.fingerprint)
}

fn respond<T: Serialize>(snap: &Snapshot, r: Result<T, ApiError>) -> Response {
    match r {
        Ok(v) => ok(snap, v),
        Err(e) => fail(snap, e),
    }
}

/// Parses a JSON body; returns the raw value too, for seed derivation.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<(T, Value), ApiError> {
    let raw: Value = serde_json::from_slice(body).map_err(|e| Error::Parse(format!("request body: {e}")))?;
    let typed = serde_json::from_value(raw.clone()).map_err(|e| Error::Parse(format!("request body: {e}")))?;
    Ok((typed, raw))
}

/// Seed used when a request omits one: a hash of the endpoint and the
/// request body without its `seed` key, so repeated requests agree.
pub fn derive_seed(endpoint: &str, raw: &Value) -> u64 {
    let mut v = raw.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("seed");
    }
    let mut h = Sha256::new();
    h.update(endpoint.as_bytes());
    h.update(serde_json::to_vec(&v).expect("json serializes"));
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

async fn blocking<R, F>(f: F) -> Result<R, ApiError>
where
    F: FnOnce() -> riskxai::Result<R> + Send + 'static,
    R: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

/// Like [`blocking`], but holds a worker-pool permit while running.
async fn pooled<R, F>(app: &App, f: F) -> Result<R, ApiError>
where
    F: FnOnce() -> riskxai::Result<R> + Send + 'static,
    R: Send + 'static,
{
    let _permit = app
        .workers
        .acquire()
        .await
        .map_err(|_| ApiError::internal("worker pool closed"))?;
    blocking(f).await
}

async fn schema(State(app): State<Arc<App>>) -> Response {
    let snap = app.snapshot();
    ok(&snap, &*snap.model.schema)
}

async fn model_card(State(app): State<Arc<App>>) -> Response {
    let snap = app.snapshot();
    let s = snap.clone();
    let r = pooled(&app, move || s.card()).await;
    respond(&snap, r)
}

async fn model_card_html(State(app): State<Arc<App>>) -> Response {
    let snap = app.snapshot();
    let s = snap.clone();
    match pooled(&app, move || s.card()).await {
        Ok(card) => with_fingerprint(
            ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], card.to_html()).into_response(),
            &snap.fingerprint,
        ),
        Err(e) => fail(&snap, e),
    }
}

#[derive(Deserialize)]
struct RecordRequest {
    record: RecordInput,
}

async fn predict(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let snap = app.snapshot();
    let r = async {
        let (req, _): (RecordRequest, _) = parse(&body)?;
        let s = snap.clone();
        blocking(move || {
            let record = req.record.resolve(&s.model.schema, s.reference.as_ref())?;
            s.model.predict_proba(&record)
        })
        .await
    }
    .await;
    respond(&snap, r)
}

#[derive(Deserialize)]
struct LimeRequest {
    record: RecordInput,
    outcome: String,
    #[serde(default)]
    config: Option<LimeConfig>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn lime(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let snap = app.snapshot();
    let r = async {
        let (req, raw): (LimeRequest, _) = parse(&body)?;
        let mut config = req.config.unwrap_or_default();
        config.seed = req.seed.unwrap_or_else(|| derive_seed("/explain/lime", &raw));
        let s = snap.clone();
        pooled(&app, move || {
            let record = req.record.resolve(&s.model.schema, s.reference.as_ref())?;
            let bg = s
                .background
                .as_ref()
                .ok_or_else(|| Error::Precondition("no reference dataset is loaded".into()))?;
            explain_lime(&s.model, bg, &record, &req.outcome, &config)
        })
        .await
    }
    .await;
    respond(&snap, r)
}

#[derive(Deserialize)]
struct ShapRequest {
    record: RecordInput,
    outcome: String,
    #[serde(default)]
    mode: Option<ShapMode>,
}

async fn shap(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let snap = app.snapshot();
    let r = async {
        let (req, _): (ShapRequest, _) = parse(&body)?;
        let s = snap.clone();
        blocking(move || {
            let record = req.record.resolve(&s.model.schema, s.reference.as_ref())?;
            let config = ShapConfig {
                mode: req.mode.unwrap_or(ShapMode::Tree),
                ..Default::default()
            };
            explain_shap(&s.model, &record, &req.outcome, &config)
        })
        .await
    }
    .await;
    respond(&snap, r)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ConstraintInput {
    features: Option<Vec<String>>,
    threshold: Option<f64>,
    direction: Option<Direction>,
}

#[derive(Deserialize)]
struct CounterfactualRequest {
    record: RecordInput,
    outcome: String,
    #[serde(default)]
    constraints: Option<ConstraintInput>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    budget: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn counterfactual(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let snap = app.snapshot();
    let r = async {
        let (req, raw): (CounterfactualRequest, _) = parse(&body)?;
        let seed = req.seed.unwrap_or_else(|| derive_seed("/counterfactual", &raw));
        let s = snap.clone();
        pooled(&app, move || {
            let record = req.record.resolve(&s.model.schema, s.reference.as_ref())?;
            s.reference()?;
            let mut constraints = s
                .bounds
                .clone()
                .ok_or_else(|| Error::Config("the schema has no mutable lab features".into()))?;
            let input = req.constraints.unwrap_or_default();
            if let Some(names) = &input.features {
                constraints = constraints.restrict(names)?;
            }
            if let Some(t) = input.threshold {
                constraints = constraints.with_threshold(t);
            }
            constraints.direction = match input.direction {
                Some(d) => d,
                None => {
                    let k = s.model.schema.outcome_index(&req.outcome)?;
                    let risk = s.model.predict_proba(&record)?.probabilities[k];
                    if risk >= constraints.threshold {
                        Direction::Decrease
                    } else {
                        Direction::Increase
                    }
                }
            };
            let mut config = CfConfig {
                seed,
                ..Default::default()
            };
            if let Some(k) = req.k {
                config.k = k;
            }
            if let Some(b) = req.budget {
                config.budget = b;
            }
            find_counterfactuals(&s.model, &record, &req.outcome, &constraints, &config)
        })
        .await
    }
    .await;
    respond(&snap, r)
}

async fn whatif(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let snap = app.snapshot();
    let r = async {
        let (req, _): (WhatIfRequest, _) = parse(&body)?;
        let s = snap.clone();
        blocking(move || whatif_predict(&s.model, s.reference.as_ref(), &req)).await
    }
    .await;
    respond(&snap, r)
}

#[derive(Deserialize)]
struct SimilarRequest {
    record: RecordInput,
    #[serde(default)]
    criteria: Option<SimilarityCriteria>,
}

async fn similar(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let snap = app.snapshot();
    let r = async {
        let (req, _): (SimilarRequest, _) = parse(&body)?;
        let s = snap.clone();
        pooled(&app, move || {
            let record = req.record.resolve(&s.model.schema, s.reference.as_ref())?;
            let criteria = req.criteria.unwrap_or_default();
            cohort_summary(&s.model, s.reference()?, &record, &criteria)
        })
        .await
    }
    .await;
    respond(&snap, r)
}

#[derive(Deserialize)]
struct ReloadRequest {
    model_path: PathBuf,
    #[serde(default)]
    dataset_path: Option<PathBuf>,
}

async fn reload(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let before = app.snapshot();
    let r = async {
        let (req, _): (ReloadRequest, _) = parse(&body)?;
        let card = app.config.card.clone();
        let next = blocking(move || Snapshot::load(&req.model_path, req.dataset_path.as_deref(), card)).await?;
        let out = json!({
            "model_fingerprint": next.fingerprint,
            "dataset_fingerprint": next.dataset_fingerprint,
        });
        app.swap(next);
        Ok(out)
    }
    .await;
    match r {
        Ok(v) => {
            let after = app.snapshot();
            ok(&after, v)
        }
        Err(e) => fail(&before, e),
    }
}
