use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::{Engine, RetrievalSet, ServiceError};

const DEFAULT_SESSION: &str = "default";
const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

type Shared = Arc<Engine>;

#[derive(Deserialize)]
struct SessionQuery {
    session: Option<String>,
}

impl SessionQuery {
    fn id(self) -> String {
        self.session.filter(|s| !s.is_empty()).unwrap_or_else(|| DEFAULT_SESSION.into())
    }
}

#[derive(Deserialize)]
struct IdSearch {
    image_id: String,
    session: Option<String>,
}

#[derive(Deserialize)]
struct PinBody {
    #[serde(rename = "ref")]
    image_ref: String,
    session: Option<String>,
}

#[derive(Serialize)]
struct SetResponse {
    session: String,
    history_depth: usize,
    set: RetrievalSet,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

async fn search(State(engine): State<Shared>, Query(q): Query<SessionQuery>, req: Request) -> Response {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let session = q.id();
    let result = if is_multipart {
        search_multipart(engine, session, req).await
    } else {
        search_json(engine, session, req).await
    };
    result.map_or_else(IntoResponse::into_response, |r| Json(r).into_response())
}

async fn search_multipart(engine: Shared, session: String, req: Request) -> Result<SetResponse, ServiceError> {
    let mut mp = Multipart::from_request(req, &()).await.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let mut bytes = None;
    while let Some(field) = mp.next_field().await.map_err(|e| ServiceError::BadRequest(e.body_text()))? {
        if field.name() == Some("image") || (bytes.is_none() && field.file_name().is_some()) {
            bytes = Some(field.bytes().await.map_err(|e| ServiceError::BadRequest(e.body_text()))?);
        }
    }
    let bytes = bytes.ok_or_else(|| ServiceError::BadRequest("multipart body has no `image` field".into()))?;
    blocking(move || {
        let (set, history_depth) = engine.search_upload(&session, &bytes)?;
        Ok(SetResponse {
            session,
            history_depth,
            set,
        })
    })
    .await
}

async fn search_json(engine: Shared, session: String, req: Request) -> Result<SetResponse, ServiceError> {
    let Json(body) = Json::<IdSearch>::from_request(req, &())
        .await
        .map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let session = body.session.filter(|s| !s.is_empty()).unwrap_or(session);
    blocking(move || {
        let (set, history_depth) = engine.search_image(&session, &body.image_id)?;
        Ok(SetResponse {
            session,
            history_depth,
            set,
        })
    })
    .await
}

async fn undo(State(engine): State<Shared>, Path(session): Path<String>) -> Result<Json<SetResponse>, ServiceError> {
    let (set, history_depth) = engine.undo(&session)?;
    Ok(Json(SetResponse {
        session,
        history_depth,
        set,
    }))
}

async fn session_info(State(engine): State<Shared>, Path(session): Path<String>) -> Json<serde_json::Value> {
    let depth = engine.history_depth(&session);
    Json(serde_json::json!({ "session": session, "history_depth": depth }))
}

fn content_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image(State(engine): State<Shared>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let bytes = blocking(move || engine.image_bytes(&id)).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&bytes))], bytes).into_response())
}

async fn datasets(State(engine): State<Shared>) -> Result<Json<serde_json::Value>, ServiceError> {
    Ok(Json(serde_json::json!({ "datasets": engine.datasets()? })))
}

async fn list_boards(State(engine): State<Shared>) -> Result<Json<serde_json::Value>, ServiceError> {
    Ok(Json(serde_json::json!({ "boards": engine.boards().list()? })))
}

async fn create_board(State(engine): State<Shared>, Path(board): Path<String>) -> Result<Response, ServiceError> {
    let created = blocking({
        let board = board.clone();
        move || engine.boards().create(&board)
    })
    .await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(serde_json::json!({ "board": board, "created": created }))).into_response())
}

async fn get_board(State(engine): State<Shared>, Path(board): Path<String>) -> Result<Json<serde_json::Value>, ServiceError> {
    let pins = engine.boards().read(&board)?;
    Ok(Json(serde_json::json!({ "board": board, "pins": pins })))
}

async fn pin(
    State(engine): State<Shared>,
    Path(board): Path<String>,
    Query(q): Query<SessionQuery>,
    body: Result<Json<PinBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let session = body.session.filter(|s| !s.is_empty()).unwrap_or_else(|| q.id());
    let pins = blocking({
        let board = board.clone();
        move || engine.pin(&session, &board, &body.image_ref)
    })
    .await?;
    Ok(Json(serde_json::json!({ "board": board, "pins": pins })))
}

/// All API routes, plus static files from `ui_dir` at `/` when given.
pub fn router(engine: Arc<Engine>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/search", post(search))
        .route("/api/image/{id}", get(image))
        .route("/api/datasets", get(datasets))
        .route("/api/boards", get(list_boards))
        .route("/api/boards/{board}", get(get_board).post(create_board))
        .route("/api/boards/{board}/pins", post(pin))
        .route("/api/session/{id}", get(session_info))
        .route("/api/session/{id}/undo", post(undo))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(engine);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub ui_dir: Option<PathBuf>,
}

pub async fn serve(engine: Engine, opts: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(engine), opts.ui_dir)).await
}
