//! JSON-over-HTTP access to a deployed model.
//!
//! Every request works on one model snapshot (`Arc<Mlp>`) taken when it starts, so a
//! reload never changes a request midway.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;

use qcnet_core::data::{FactorSchema, FactorValues, Role};
use qcnet_core::doe::{check_lot, compute_limits, CheckMode};
use qcnet_core::eval::is_defect;
use qcnet_core::net::Mlp;
use qcnet_core::Error;

#[derive(Debug, Clone, Copy)]
pub struct ServiceSettings {
    pub threshold: f64,
    pub mode: CheckMode,
    pub grid_resolution: usize,
}

pub struct AppState {
    schema: FactorSchema,
    schema_json: String,
    settings: ServiceSettings,
    model_path: Option<PathBuf>,
    model: RwLock<Arc<Mlp>>,
}

impl AppState {
    pub fn new(
        schema: FactorSchema,
        model: Mlp,
        model_path: Option<PathBuf>,
        settings: ServiceSettings,
    ) -> qcnet_core::Result<Self> {
        model.check_schema(&schema)?;
        Ok(Self {
            schema_json: schema.to_json(),
            schema,
            settings,
            model_path,
            model: RwLock::new(Arc::new(model)),
        })
    }

    fn snapshot(&self) -> Arc<Mlp> {
        self.model.read().expect("model lock").clone()
    }

    fn swap(&self, model: Mlp) {
        *self.model.write().expect("model lock") = Arc::new(model);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/schema", get(schema))
        .route("/api/predict", post(predict))
        .route("/api/limits", post(limits))
        .route("/api/check", post(check))
        .route("/api/reload", post(reload))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
enum ApiError {
    Fields(Vec<FieldError>),
    BadRequest(Error),
    Internal(Error),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Model(_) | Error::Io(_) | Error::LmBreakdown => ApiError::Internal(e),
            e => match e.field() {
                Some(f) => ApiError::Fields(vec![FieldError {
                    field: f.to_string(),
                    message: e.to_string(),
                }]),
                None => ApiError::BadRequest(e),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Fields(fields) => (
                StatusCode::BAD_REQUEST,
                json!({"error": "invalid_fields", "fields": fields}),
            ),
            ApiError::BadRequest(e) => (
                StatusCode::BAD_REQUEST,
                json!({"error": e.kind(), "message": e.to_string()}),
            ),
            ApiError::Internal(e) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({"error": e.kind(), "message": e.to_string()}),
            ),
        };
        (status, json_body(body.to_string())).into_response()
    }
}

fn json_body(text: String) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], text)
}

fn ok_json<T: Serialize>(value: &T) -> Response {
    json_body(serde_json::to_string(value).expect("response serializes")).into_response()
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(Error::Json(e)))
}

/// Checks request values against the schema, collecting every problem. Factors with a
/// role in `required` must be present.
fn validate_values(
    schema: &FactorSchema,
    values: &FactorValues,
    required: &[Role],
) -> Result<FactorValues, ApiError> {
    let mut errors = Vec::new();
    for name in values.keys() {
        if schema.factor(name).is_none() {
            errors.push(FieldError {
                field: name.clone(),
                message: "unknown factor".into(),
            });
        }
    }
    let mut out = FactorValues::new();
    for f in &schema.factors {
        match values.get(&f.name) {
            Some(v) => match f.check_in_range(v) {
                Ok(v) => {
                    out.insert(f.name.clone(), v);
                }
                Err(e) => errors.push(FieldError {
                    field: f.name.clone(),
                    message: e.to_string(),
                }),
            },
            None if required.contains(&f.role) => errors.push(FieldError {
                field: f.name.clone(),
                message: "missing value".into(),
            }),
            None => {}
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(ApiError::Fields(errors))
    }
}

fn threshold_or(default: f64, t: Option<f64>) -> Result<f64, ApiError> {
    match t {
        None => Ok(default),
        Some(t) if t > 0.0 && t < 1.0 => Ok(t),
        Some(_) => Err(ApiError::Fields(vec![FieldError {
            field: "threshold".into(),
            message: "threshold must be in (0, 1)".into(),
        }])),
    }
}

const ALL_ROLES: [Role; 3] = [Role::Controllable, Role::NonControllable, Role::Protocol];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValuesRequest {
    values: FactorValues,
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckRequest {
    values: FactorValues,
    #[serde(default)]
    mode: Option<CheckMode>,
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ReloadRequest {
    #[serde(default)]
    path: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct Prediction {
    pub probability: f64,
    pub alert: bool,
    pub threshold: f64,
}

async fn schema(State(st): State<Arc<AppState>>) -> Response {
    json_body(st.schema_json.clone()).into_response()
}

async fn predict(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ValuesRequest = parse(&body)?;
    let threshold = threshold_or(st.settings.threshold, req.threshold)?;
    let values = validate_values(&st.schema, &req.values, &ALL_ROLES)?;
    let probability = st.snapshot().predict_values(&values)?;
    Ok(ok_json(&Prediction {
        probability,
        alert: is_defect(probability, threshold),
        threshold,
    }))
}

async fn limits(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ValuesRequest = parse(&body)?;
    let threshold = threshold_or(st.settings.threshold, req.threshold)?;
    let values = validate_values(
        &st.schema,
        &req.values,
        &[Role::NonControllable, Role::Protocol],
    )?;
    let limits = compute_limits(
        &st.snapshot(),
        &st.schema,
        &values,
        threshold,
        st.settings.grid_resolution,
    )?;
    Ok(ok_json(&limits))
}

async fn check(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CheckRequest = parse(&body)?;
    let threshold = threshold_or(st.settings.threshold, req.threshold)?;
    let values = validate_values(&st.schema, &req.values, &ALL_ROLES)?;
    let decision = check_lot(
        &st.snapshot(),
        &st.schema,
        &values,
        req.mode.unwrap_or(st.settings.mode),
        threshold,
        st.settings.grid_resolution,
    )?;
    Ok(ok_json(&decision))
}

fn load_checked(path: &Path, schema: &FactorSchema) -> qcnet_core::Result<Mlp> {
    let m = Mlp::load(path)?;
    m.check_schema(schema)?;
    Ok(m)
}

/// Loads a model file and swaps it in. On failure the current model stays.
async fn reload(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ReloadRequest = if body.is_empty() {
        ReloadRequest::default()
    } else {
        parse(&body)?
    };
    let path = req.path.or_else(|| st.model_path.clone()).ok_or_else(|| {
        ApiError::Fields(vec![FieldError {
            field: "path".into(),
            message: "no model path given and none configured".into(),
        }])
    })?;
    let model = load_checked(&path, &st.schema).map_err(|e| {
        ApiError::Fields(vec![FieldError {
            field: "path".into(),
            message: e.to_string(),
        }])
    })?;
    let summary = json!({
        "reloaded": path.display().to_string(),
        "defect": model.defect_name(),
        "active_parameters": model.active_count(),
    });
    st.swap(model);
    Ok(ok_json(&summary))
}
