//! HTTP service over paired datasets.
//!
//! Pair files are loaded once into [`PairTable`]s indexed by far-field pixel
//! and never modified. Every render is a pure function of (dataset, mask,
//! bin) and is serialised with the same payload code as the command line, so
//! the service and `qpcm render` agree byte for byte.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/datasets` | `{"path": ...}` as JSON, or the raw pair file |
//! | GET | `/datasets` | |
//! | GET | `/datasets/{id}` | |
//! | POST | `/datasets/{id}/render` | `{mask, bin?}` |
//! | POST | `/datasets/{id}/dpc` | `{mask_a, mask_b?, min_counts?, bin?}` |
//! | POST | `/datasets/{id}/visibility` | `{mask, roi, n_lines, bin?}` |

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, Cursor, Read};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use qpcm::aperture::ApertureMask;
use qpcm::dataset::PairTable;
use qpcm::geom::Region;
use qpcm::image::{dpc, visibility, Roi, DEFAULT_MIN_COUNTS};
use qpcm::payload::{to_json, DpcPayload, FramePayload};
use qpcm::store::{EventReader, RecordKind, RunMetadata};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::OnceCell;
use tower_http::cors::{AllowOrigin, CorsLayer};

mod error;

pub use error::ApiError;

const PAIR_RECORD_BYTES: usize = 32;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub id: String,
    pub sha256: String,
    /// File path, or "upload".
    pub source: String,
    pub pairs: usize,
    pub exposure_s: f64,
    pub time_bin: f64,
    pub sensor: [u16; 2],
    pub near_region: Region,
    pub far_region: Region,
    pub metadata: RunMetadata,
    pub memory_bytes: usize,
}

pub struct Dataset {
    pub info: DatasetInfo,
    pub table: PairTable,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Upper bound on resident pair-table memory (bytes).
    pub memory_budget: usize,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<HeaderValue>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { memory_budget: 4 << 30, cors_origins: Vec::new() }
    }
}

type LoadResult = Result<Arc<Dataset>, ApiError>;

pub struct AppState {
    config: ServiceConfig,
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    inflight: Mutex<HashMap<String, Arc<OnceCell<LoadResult>>>>,
    used: Mutex<usize>,
    loads: AtomicUsize,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            datasets: RwLock::new(BTreeMap::new()),
            inflight: Mutex::new(HashMap::new()),
            used: Mutex::new(0),
            loads: AtomicUsize::new(0),
        })
    }

    /// Number of table builds performed; coalesced registrations count once.
    pub fn loads(&self) -> usize {
        self.loads.load(Ordering::SeqCst)
    }

    pub fn memory_used(&self) -> usize {
        *self.used.lock().expect("lock")
    }

    pub fn get(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        self.datasets.read().expect("lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    /// Register a pair file on the server's filesystem.
    pub async fn register_path(self: &Arc<Self>, path: PathBuf) -> LoadResult {
        let canonical = std::fs::canonicalize(&path).map_err(|e| ApiError::from(qpcm::Error::file(&path, e)))?;
        let key = format!("path:{}", canonical.display());
        let state = self.clone();
        self.single_flight(key, move || {
            let sha = sha256_file(&canonical)?;
            let len = std::fs::metadata(&canonical).map_err(|e| qpcm::Error::file(&canonical, e))?.len() as usize;
            let file = std::fs::File::open(&canonical).map_err(|e| qpcm::Error::file(&canonical, e))?;
            state.load(sha, canonical.display().to_string(), len, BufReader::new(file))
        })
        .await
    }

    /// Register an uploaded pair file.
    pub async fn register_bytes(self: &Arc<Self>, bytes: Bytes) -> LoadResult {
        let sha = hex::encode(Sha256::digest(&bytes));
        let key = format!("sha:{sha}");
        let state = self.clone();
        self.single_flight(key, move || {
            let len = bytes.len();
            state.load(sha, "upload".into(), len, Cursor::new(bytes))
        })
        .await
    }

    async fn single_flight<F>(self: &Arc<Self>, key: String, load: F) -> LoadResult
    where
        F: FnOnce() -> LoadResult + Send + 'static,
    {
        let cell = self.inflight.lock().expect("lock").entry(key.clone()).or_default().clone();
        let result = cell
            .get_or_init(|| async move {
                tokio::task::spawn_blocking(load)
                    .await
                    .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())))
            })
            .await
            .clone();
        let mut inflight = self.inflight.lock().expect("lock");
        if inflight.get(&key).is_some_and(|c| Arc::ptr_eq(c, &cell)) {
            inflight.remove(&key);
        }
        result
    }

    fn load<R: Read>(&self, sha: String, source: String, file_len: usize, reader: R) -> LoadResult {
        let id = sha[..16].to_string();
        if let Ok(existing) = self.get(&id) {
            return Ok(existing);
        }
        let reader = EventReader::new(reader)?;
        let h = reader.header().clone();
        if h.kind != RecordKind::Pair {
            return Err(qpcm::Error::RecordKind { expected: RecordKind::Pair.name(), found: h.kind.name() }.into());
        }
        let n = file_len.saturating_sub(h.encoded_len()) / PAIR_RECORD_BYTES;
        let need = PairTable::estimate_bytes(n, &h.far);
        self.reserve(need)?;
        self.loads.fetch_add(1, Ordering::SeqCst);
        let table = match PairTable::from_reader(reader) {
            Ok(t) => t,
            Err(e) => {
                self.release(need);
                return Err(e.into());
            }
        };
        let info = DatasetInfo {
            id: id.clone(),
            sha256: sha,
            source,
            pairs: table.len(),
            exposure_s: table.exposure(),
            time_bin: h.time_bin,
            sensor: h.sensor,
            near_region: h.near,
            far_region: h.far,
            metadata: RunMetadata::parse(&h.metadata),
            memory_bytes: need,
        };
        let ds = Arc::new(Dataset { info, table });
        let mut map = self.datasets.write().expect("lock");
        if let Some(existing) = map.get(&id) {
            // same content registered concurrently under another key
            self.release(need);
            return Ok(existing.clone());
        }
        map.insert(id, ds.clone());
        Ok(ds)
    }

    fn reserve(&self, bytes: usize) -> Result<(), ApiError> {
        let mut used = self.used.lock().expect("lock");
        if *used + bytes > self.config.memory_budget {
            return Err(ApiError::new(
                StatusCode::INSUFFICIENT_STORAGE,
                "memory_budget",
                format!("dataset needs {bytes} bytes; {} of {} in use", *used, self.config.memory_budget),
            ));
        }
        *used += bytes;
        Ok(())
    }

    fn release(&self, bytes: usize) {
        *self.used.lock().expect("lock") -= bytes;
    }
}

fn sha256_file(path: &Path) -> qpcm::Result<String> {
    let mut f = BufReader::with_capacity(1 << 20, std::fs::File::open(path).map_err(|e| qpcm::Error::file(path, e))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn json_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn parse_body<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())))
}

#[derive(Serialize)]
struct DatasetResponse<'a> {
    dataset: &'a DatasetInfo,
    occupancy: FramePayload,
}

fn dataset_response(ds: &Dataset) -> Response {
    let mut occ = ds.table.far_occupancy();
    occ.dataset = ds.info.id.clone();
    json_response(to_json(&DatasetResponse { dataset: &ds.info, occupancy: FramePayload::new(&occ) }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterRequest {
    path: PathBuf,
}

async fn create_dataset(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let ds = if is_json {
        let req: RegisterRequest = parse_body(&body)?;
        state.register_path(req.path).await?
    } else {
        state.register_bytes(body).await?
    };
    Ok(dataset_response(&ds))
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Response {
    let infos: Vec<DatasetInfo> = state.datasets.read().expect("lock").values().map(|d| d.info.clone()).collect();
    json_response(to_json(&serde_json::json!({ "datasets": infos })))
}

async fn get_dataset(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let ds = state.get(&id)?;
    Ok(dataset_response(&ds))
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    mask: ApertureMask,
    #[serde(default = "one")]
    bin: usize,
}

async fn render(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let ds = state.get(&id)?;
    let req: RenderRequest = parse_body(&body)?;
    let body = blocking(move || {
        let mut frame = ds.table.render(&req.mask, req.bin)?;
        frame.dataset = ds.info.id.clone();
        Ok(to_json(&FramePayload::new(&frame)))
    })
    .await?;
    Ok(json_response(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DpcRequest {
    mask_a: ApertureMask,
    mask_b: Option<ApertureMask>,
    min_counts: Option<u32>,
    #[serde(default = "one")]
    bin: usize,
}

async fn dpc_frame(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let ds = state.get(&id)?;
    let req: DpcRequest = parse_body(&body)?;
    let body = blocking(move || {
        let far = ds.table.far_region();
        let b = req.mask_b.unwrap_or_else(|| req.mask_a.complement(far));
        let a = ds.table.render(&req.mask_a, req.bin)?;
        let b = ds.table.render(&b, req.bin)?;
        let d = dpc(&a, &b, req.min_counts.unwrap_or(DEFAULT_MIN_COUNTS))?;
        Ok(to_json(&DpcPayload::new(&d)))
    })
    .await?;
    Ok(json_response(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VisibilityRequest {
    mask: ApertureMask,
    roi: Roi,
    n_lines: usize,
    #[serde(default = "one")]
    bin: usize,
}

async fn visibility_report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Response, ApiError> {
    let ds = state.get(&id)?;
    let req: VisibilityRequest = parse_body(&body)?;
    let body = blocking(move || {
        let frame = ds.table.render(&req.mask, req.bin)?;
        Ok(to_json(&visibility(&frame, &req.roi, req.n_lines)?))
    })
    .await?;
    Ok(json_response(body))
}

pub fn router(state: Arc<AppState>) -> Router {
    let origins = &state.config.cors_origins;
    let allow = if origins.is_empty() { AllowOrigin::any() } else { AllowOrigin::list(origins.clone()) };
    let cors = CorsLayer::new().allow_origin(allow).allow_methods([Method::GET, Method::POST]).allow_headers([header::CONTENT_TYPE]);
    // uploads are bounded by the memory budget check instead
    let upload_limit = state.config.memory_budget.saturating_mul(4).max(1 << 20);
    Router::new()
        .route("/datasets", post(create_dataset).get(list_datasets).layer(DefaultBodyLimit::max(upload_limit)))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/render", post(render))
        .route("/datasets/{id}/dpc", post(dpc_frame))
        .route("/datasets/{id}/visibility", post(visibility_report))
        .layer(cors)
        .with_state(state)
}
