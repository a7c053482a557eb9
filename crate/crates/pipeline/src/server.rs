//! HTTP API for the review UI.
//!
//! Reads run concurrently against state loaded at startup. Uploads and plan
//! applications are the only mutations; at most one plan application runs at
//! a time and further requests get 409 until it finishes.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vqi_core::augment::{self, AugmentationPlan};
use vqi_core::cam::Method;
use vqi_core::coco::LabelSpace;
use vqi_core::imageio;
use vqi_core::metrics::ComparisonReport;
use vqi_core::model::{SegModel, ToyNet};
use vqi_core::npy;
use vqi_core::{Mask, Tensor};

use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::overlay::export_overlay;
use crate::stages;
use crate::MissingArtifact;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        if e.downcast_ref::<MissingArtifact>().is_some() {
            Self::not_found(format!("{e:#}"))
        } else {
            Self::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"))
        }
    }
}

impl From<vqi_core::Error> for ApiError {
    fn from(e: vqi_core::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded { comparison: Box<ComparisonReport> },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub id: u64,
    pub plan_id: u64,
    #[serde(flatten)]
    pub state: JobState,
}

pub struct AppState {
    pub cfg: RunConfig,
    pub labels: LabelSpace,
    pub train: Split,
    pub eval: Split,
    pub model: ToyNet,
    uploads: RwLock<BTreeMap<u64, Tensor>>,
    plans: Mutex<BTreeMap<u64, AugmentationPlan>>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    running: Mutex<Option<u64>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Loads the dataset and the original model; needs `synth` and `train`.
    pub fn load(cfg: RunConfig) -> anyhow::Result<Self> {
        let model = stages::load_model(&cfg, stages::ORIGINAL_DIR)?;
        let train = stages::load_train_split(&cfg)?;
        let eval = stages::load_eval_split(&cfg)?;
        let next = train
            .images
            .keys()
            .chain(eval.images.keys())
            .max()
            .copied()
            .unwrap_or(0)
            + 1;
        Ok(Self {
            labels: model.labels().clone(),
            cfg,
            train,
            eval,
            model,
            uploads: RwLock::new(BTreeMap::new()),
            plans: Mutex::new(BTreeMap::new()),
            jobs: Mutex::new(BTreeMap::new()),
            running: Mutex::new(None),
            next_id: AtomicU64::new(next),
        })
    }

    fn fresh_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn split_of(&self, id: u64) -> Option<&Split> {
        [&self.train, &self.eval]
            .into_iter()
            .find(|s| s.images.contains_key(&id))
    }

    fn image(&self, id: u64) -> ApiResult<Tensor> {
        if let Some(split) = self.split_of(id) {
            return Ok(split.images[&id].clone());
        }
        self.uploads
            .read()
            .expect("uploads lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown image {id}")))
    }

    fn chosen_method(&self) -> Method {
        stages::read_selection(&self.cfg)
            .ok()
            .and_then(|s| s.chosen.parse().ok())
            .unwrap_or(Method::HiResCam)
    }

    fn class_index(&self, raw: &str) -> ApiResult<usize> {
        let class = match raw.parse::<usize>() {
            Ok(c) => c,
            Err(_) => self
                .labels
                .class_of(raw)
                .ok_or_else(|| ApiError::bad_request(format!("unknown class {raw:?}")))?,
        };
        if class == 0 || class >= self.labels.class_count() {
            return Err(ApiError::bad_request(format!(
                "class {class} is not a foreground class"
            )));
        }
        Ok(class)
    }
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/images", get(list_images).post(upload_image))
        .route("/api/images/{id}/image", get(image_png))
        .route("/api/images/{id}/overlay", get(overlay_png))
        .route("/api/images/{id}/annotations", get(annotations))
        .route("/api/methods", get(methods))
        .route("/api/plan", post(submit_plan))
        .route("/api/plan/{id}/apply", post(apply_plan))
        .route("/api/jobs/{id}", get(job))
        .route("/api/comparison", get(comparison))
        .with_state(state)
}

pub async fn serve(cfg: RunConfig) -> anyhow::Result<()> {
    let port = cfg.port;
    let state = Arc::new(tokio::task::spawn_blocking(move || AppState::load(cfg)).await??);
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .with_context(|| format!("binding port {port}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
struct ListQuery {
    split: Option<String>,
}

#[derive(Serialize)]
struct ImageEntry {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
    split: &'static str,
}

fn entries(split: &Split, name: &'static str) -> Vec<ImageEntry> {
    split
        .coco
        .images
        .iter()
        .map(|i| ImageEntry {
            id: i.id,
            file_name: i.file_name.clone(),
            width: i.width,
            height: i.height,
            split: name,
        })
        .collect()
}

async fn list_images(State(st): State<Shared>, Query(q): Query<ListQuery>) -> ApiResult<Json<Vec<ImageEntry>>> {
    let list = match q.split.as_deref().unwrap_or("train") {
        "train" => entries(&st.train, "train"),
        "eval" => entries(&st.eval, "eval"),
        "upload" => st
            .uploads
            .read()
            .expect("uploads lock")
            .iter()
            .map(|(&id, t)| {
                let (height, width) = t.spatial();
                ImageEntry {
                    id,
                    file_name: String::new(),
                    width,
                    height,
                    split: "upload",
                }
            })
            .collect(),
        other => return Err(ApiError::bad_request(format!("unknown split {other:?}"))),
    };
    Ok(Json(list))
}

async fn image_png(State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<Response> {
    let image = st.image(id)?;
    Ok(png(imageio::image_to_png(&image)?))
}

#[derive(Deserialize)]
struct OverlayQuery {
    method: Option<String>,
    class: Option<String>,
    alpha: Option<f64>,
}

fn overlay_bytes(st: &AppState, id: u64, class: usize, method: Method, alpha: f64) -> ApiResult<Vec<u8>> {
    let image = st.image(id)?;
    let stored = st
        .cfg
        .out(stages::MAPS_DIR)
        .join(stages::map_file_name(id, class, method));
    let map = if stored.exists() {
        npy::read(&stored)?
    } else {
        let gt: Option<Mask> = match st.split_of(id) {
            Some(split) => Some(data::class_mask(split, &st.labels, id, class)?),
            None => None,
        };
        stages::explain_one(&st.model, &image, class, gt.as_ref(), method)
            .map_err(|e| ApiError::not_found(format!("{e:#}")))?
            .values
    };
    export_overlay(&image, &map, alpha).map_err(|e| ApiError::bad_request(format!("{e:#}")))
}

async fn overlay_png(
    State(st): State<Shared>,
    Path(id): Path<u64>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let method = match q.method.as_deref() {
        Some(m) => m.parse::<Method>().map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => st.chosen_method(),
    };
    let class = st.class_index(q.class.as_deref().unwrap_or("1"))?;
    let alpha = q.alpha.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ApiError::bad_request(format!("alpha {alpha} is outside [0, 1]")));
    }
    st.image(id)?;
    let bytes = blocking(move || overlay_bytes(&st, id, class, method, alpha)).await?;
    Ok(png(bytes))
}

async fn annotations(State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    if let Some(split) = st.split_of(id) {
        let anns: Vec<_> = split.coco.annotations_for(id).collect();
        return Ok(Json(json!({
            "image": split.coco.image(id),
            "categories": split.coco.categories,
            "annotations": anns,
        })));
    }
    st.image(id)?;
    Ok(Json(
        json!({ "image": { "id": id }, "categories": [], "annotations": [] }),
    ))
}

async fn methods(State(st): State<Shared>) -> ApiResult<Json<Value>> {
    let evaluation = stages::read_evaluation(&st.cfg)?;
    let selection = stages::read_selection(&st.cfg)?;
    Ok(Json(json!({
        "rows": evaluation.rows,
        "time_unit": evaluation.time_unit,
        "chosen": selection.chosen,
        "ranking": selection.ranking,
    })))
}

#[derive(Deserialize)]
struct UploadRequest {
    png_base64: String,
    #[serde(default)]
    method: Option<String>,
    #[serde(default)]
    class: Option<String>,
}

fn predict_and_explain(
    st: &AppState,
    id: u64,
    image: &Tensor,
    req_class: Option<usize>,
    method: Method,
) -> ApiResult<Value> {
    let scores = st.model.forward(image)?;
    let (h, w) = image.spatial();
    let labels = scores.argmax();
    let mut class_pixels = serde_json::Map::new();
    for c in 1..st.labels.class_count() {
        let n = labels.iter().filter(|&&l| l as usize == c).count();
        class_pixels.insert(st.labels.name(c).to_string(), json!(n));
    }
    let label_image = Tensor::new(
        vec![3, h, w],
        (0..3).flat_map(|_| labels.iter().map(|&l| l as f64 / 255.0)).collect(),
    )?;
    let class = req_class.or_else(|| {
        (1..st.labels.class_count())
            .map(|c| (c, scores.predicted_mask(c).count()))
            .filter(|&(_, n)| n > 0)
            .max_by_key(|&(c, n)| (n, std::cmp::Reverse(c)))
            .map(|(c, _)| c)
    });
    let explanation = match class {
        Some(c) => {
            let map = stages::explain_one(&st.model, image, c, None, method)
                .map_err(|e| ApiError::bad_request(format!("{e:#}")))?;
            let overlay = export_overlay(image, &map.values, 0.5)?;
            json!({
                "method": method.name(),
                "class": c,
                "class_name": st.labels.name(c),
                "runtime_ms": map.runtime_ms,
                "overlay_png_base64": BASE64.encode(overlay),
            })
        }
        None => Value::Null,
    };
    Ok(json!({
        "id": id,
        "width": w,
        "height": h,
        "prediction": {
            "class_pixels": class_pixels,
            "label_png_base64": BASE64.encode(imageio::image_to_png(&label_image)?),
        },
        "explanation": explanation,
    }))
}

async fn upload_image(State(st): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: UploadRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed upload: {e}")))?;
    let bytes = BASE64
        .decode(req.png_base64.trim())
        .map_err(|e| ApiError::bad_request(format!("png_base64: {e}")))?;
    let image = imageio::png_to_image(&bytes).map_err(|e| ApiError::bad_request(format!("not a PNG: {e}")))?;
    let method = match req.method.as_deref() {
        Some(m) => m.parse::<Method>().map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => st.chosen_method(),
    };
    if method.needs_live_model() && !st.model.is_live() {
        return Err(ApiError::bad_request(format!("{method} requires live model")));
    }
    let class = req.class.as_deref().map(|c| st.class_index(c)).transpose()?;
    let id = st.fresh_id();
    let result = blocking(move || {
        let out = predict_and_explain(&st, id, &image, class, method)?;
        st.uploads.write().expect("uploads lock").insert(id, image);
        Ok(out)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(result)))
}

async fn submit_plan(State(st): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let value: Value =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed plan: {e}")))?;
    if value
        .get("ops")
        .and_then(Value::as_array)
        .is_some_and(|ops| ops.is_empty())
    {
        return Err(ApiError::bad_request("empty plan"));
    }
    let plan: AugmentationPlan =
        serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("malformed plan: {e}")))?;
    if plan.ops.is_empty() {
        return Err(ApiError::bad_request("empty plan"));
    }
    let (plan, report) = blocking(move || {
        let (_, report) =
            augment::apply_plan(&st.train.coco, &plan).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let id = st.fresh_id();
        st.plans.lock().expect("plans lock").insert(id, plan);
        Ok((id, report))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": plan, "report": report }))))
}

fn run_job(st: &AppState, plan: &AugmentationPlan) -> anyhow::Result<ComparisonReport> {
    stages::apply_plan(&st.cfg, plan)?;
    stages::retrain(&st.cfg)?;
    stages::compare(&st.cfg)
}

async fn apply_plan(State(st): State<Shared>, Path(plan_id): Path<u64>) -> ApiResult<(StatusCode, Json<Job>)> {
    let plan = st
        .plans
        .lock()
        .expect("plans lock")
        .get(&plan_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown plan {plan_id}")))?;
    let job = {
        let mut running = st.running.lock().expect("job lock");
        if let Some(active) = *running {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("job {active} is already running"),
            ));
        }
        let job = Job {
            id: st.fresh_id(),
            plan_id,
            state: JobState::Running,
        };
        *running = Some(job.id);
        st.jobs.lock().expect("jobs lock").insert(job.id, job.clone());
        job
    };
    let job_id = job.id;
    let worker = st.clone();
    tokio::task::spawn_blocking(move || {
        let state = match run_job(&worker, &plan) {
            Ok(report) => JobState::Succeeded {
                comparison: Box::new(report),
            },
            Err(e) => JobState::Failed {
                error: format!("{e:#}"),
            },
        };
        let mut running = worker.running.lock().expect("job lock");
        if let Some(j) = worker.jobs.lock().expect("jobs lock").get_mut(&job_id) {
            j.state = state;
        }
        *running = None;
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn job(State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    st.jobs
        .lock()
        .expect("jobs lock")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

async fn comparison(State(st): State<Shared>) -> ApiResult<Json<stages::ComparisonArtifact>> {
    Ok(Json(stages::read_comparison(&st.cfg)?))
}
