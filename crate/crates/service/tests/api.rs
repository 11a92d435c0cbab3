use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use obscura_core::corpus::{build_corpus, CorpusConfig, CorpusIndex};
use obscura_core::RasterImage;
use obscura_service::{router, Engine, HISTORY_CAPACITY};
use serde_json::{json, Value};
use tower::ServiceExt;

fn write_external(dir: &Path, n: usize, phase: u32) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n as u32 {
        let img = RasterImage::from_fn(40, 30, |x, y| {
            [
                ((x * (i + 2) + phase * 40) % 256) as u8,
                ((y * (i + 3) * 5) % 256) as u8,
                ((x + y + i * 30 + phase * 90) % 256) as u8,
            ]
        });
        img.save_png(&dir.join(format!("img{i}.png"))).unwrap();
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: std::path::PathBuf,
    boards: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_external(&dir.path().join("wiki"), 6, 0);
    write_external(&dir.path().join("arch"), 5, 1);
    let cfg = CorpusConfig::parse(
        r#"
[forest]
n_trees = 8
leaf_size = 4
seed = 1

[abstract]
count = 8
seed = 4
width = 40
height = 40
particles = 40
timesteps = 8
bordered_share = 0.5

[filtered]
filters = 3
synthetic_sources = 2
source_size = 32
seed = 2

[palette]
count = 6
seed = 3

[[external]]
tag = "wikiart-like-external"
dir = "wiki"

[[external]]
tag = "archive-like-external"
dir = "arch"
"#,
    )
    .unwrap();
    let corpus = dir.path().join("corpus");
    build_corpus(&cfg, dir.path(), &corpus).unwrap();
    let boards = dir.path().join("boards");
    Fixture {
        corpus,
        boards,
        _dir: dir,
    }
}

fn app(f: &Fixture) -> Router {
    let index = CorpusIndex::open(&f.corpus).unwrap();
    router(Arc::new(Engine::new(Some(index), &f.boards).unwrap()), None)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, body.to_vec())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let (status, bytes) = send(app, req.body(body).unwrap()).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn upload(app: &Router, session: &str, bytes: &[u8]) -> (StatusCode, Value) {
    let boundary = "XyZboundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"seed.png\"\r\n\
             Content-Type: application/octet-stream\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let req = Request::builder()
        .method("POST")
        .uri(format!("/api/search?session={session}"))
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn result_ids(v: &Value) -> Vec<String> {
    v["set"]["results"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap().to_string()).collect()
}

async fn search_id(app: &Router, session: &str, id: &str) -> (StatusCode, Value) {
    call(app, "POST", "/api/search", Some(json!({ "image_id": id, "session": session }))).await
}

#[tokio::test]
async fn five_datasets_two_boxes_each() {
    let f = fixture();
    let app = app(&f);
    let (status, ds) = call(&app, "GET", "/api/datasets", None).await;
    assert_eq!(status, StatusCode::OK);
    let ds = ds["datasets"].as_array().unwrap();
    assert_eq!(ds.len(), 5);
    assert!(ds.iter().all(|d| d["slots"] == 2));

    let index = CorpusIndex::open(&f.corpus).unwrap();
    for r in index.manifest().records.iter().step_by(3) {
        let (status, v) = search_id(&app, "alloc", &r.id).await;
        assert_eq!(status, StatusCode::OK);
        let results = v["set"]["results"].as_array().unwrap();
        assert_eq!(results.len(), 10);
        let tags: Vec<&str> = results.iter().map(|e| e["dataset"].as_str().unwrap()).collect();
        let expected: Vec<&str> = ["abstract", "filtered", "wikiart-like-external", "archive-like-external", "palette"]
            .iter()
            .flat_map(|t| [*t, *t])
            .collect();
        assert_eq!(tags, expected);
        for pair in results.chunks(2) {
            assert!(pair[0]["distance"].as_f64().unwrap() <= pair[1]["distance"].as_f64().unwrap());
        }
        assert!(!result_ids(&v).contains(&r.id));
    }
}

#[tokio::test]
async fn byte_identical_upload_finds_itself() {
    let f = fixture();
    let app = app(&f);
    let index = CorpusIndex::open(&f.corpus).unwrap();
    let abstracts: Vec<_> = index.manifest().records.iter().filter(|r| r.tag.as_str() == "abstract").collect();
    assert!(abstracts.iter().any(|r| r.crop_fraction > 0.0));
    assert!(abstracts.iter().any(|r| r.crop_fraction == 0.0));
    for r in abstracts {
        let bytes = std::fs::read(f.corpus.join(&r.path)).unwrap();
        let (status, v) = upload(&app, "up", &bytes).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let first = &v["set"]["results"][0];
        assert_eq!(first["id"], r.id.as_str());
        assert!(first["distance"].as_f64().unwrap() < 1e-6);
        let (_, again) = upload(&app, "up", &bytes).await;
        assert_eq!(again["set"]["results"], v["set"]["results"]);
        assert_eq!(v["set"]["seed"]["kind"], "upload");
    }
}

#[tokio::test]
async fn reseed_excludes_seed_and_is_deterministic() {
    let f = fixture();
    let app = app(&f);
    let index = CorpusIndex::open(&f.corpus).unwrap();
    let id = &index.manifest().records[4].id;
    let (_, a) = search_id(&app, "s", id).await;
    let (_, b) = search_id(&app, "other", id).await;
    assert_eq!(a["set"]["results"], b["set"]["results"]);
    assert!(!result_ids(&a).contains(id));
    let (status, v) = search_id(&app, "s", "abstract_does_not_exist").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_image");
}

#[tokio::test]
async fn undo_restores_previous_sets_up_to_capacity() {
    let f = fixture();
    let app = app(&f);
    let index = CorpusIndex::open(&f.corpus).unwrap();
    let ids: Vec<String> = index.manifest().records.iter().map(|r| r.id.clone()).collect();

    let (status, v) = call(&app, "POST", "/api/session/fresh/undo", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "history_empty");

    let (_, a) = search_id(&app, "ab", &ids[0]).await;
    let (_, b) = search_id(&app, "ab", &ids[1]).await;
    assert_ne!(a["set"]["results"], b["set"]["results"]);
    let (status, u) = call(&app, "POST", "/api/session/ab/undo", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(u["set"], a["set"]);
    assert_eq!(u["history_depth"], 0);

    let mut sets = Vec::new();
    for i in 0..60 {
        let (_, v) = search_id(&app, "long", &ids[i % ids.len()]).await;
        sets.push(v["set"].clone());
    }
    let (_, info) = call(&app, "GET", "/api/session/long", None).await;
    assert_eq!(info["history_depth"], HISTORY_CAPACITY);
    for k in 0..50 {
        let (status, v) = call(&app, "POST", "/api/session/long/undo", None).await;
        assert_eq!(status, StatusCode::OK, "undo {k}");
        assert_eq!(v["set"], sets[58 - k]);
    }
    let (status, _) = call(&app, "POST", "/api/session/long/undo", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn pins_are_appended_and_survive_restart() {
    let f = fixture();
    let app = app(&f);
    let index = CorpusIndex::open(&f.corpus).unwrap();
    let id = index.manifest().records[2].id.clone();

    let (status, _) = call(&app, "POST", "/api/boards/ideas/pins", Some(json!({ "ref": id }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/boards/ideas", None).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = call(&app, "POST", "/api/boards/ideas", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "POST", "/api/boards/bad.name", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, v) = call(&app, "POST", "/api/boards/ideas/pins", Some(json!({ "ref": id }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["pins"].as_array().unwrap().len(), 1);
    let (_, v) = call(&app, "POST", "/api/boards/ideas/pins", Some(json!({ "ref": id }))).await;
    assert_eq!(v["pins"].as_array().unwrap().len(), 2);

    let (status, v) = call(&app, "POST", "/api/boards/ideas/pins", Some(json!({ "ref": "nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_image");

    let seed = RasterImage::from_fn(33, 21, |x, y| [(x * 7) as u8, (y * 11) as u8, 90]).encode_png().unwrap();
    let (_, s) = upload(&app, "pinner", &seed).await;
    let hash = s["set"]["seed"]["hash"].as_str().unwrap().to_string();
    assert!(hash.starts_with("sha256:"));
    let (status, _) = call(&app, "POST", "/api/boards/ideas/pins", Some(json!({ "ref": hash, "session": "pinner" }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, bytes) =
        send(&app, Request::builder().uri(format!("/api/image/{hash}")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, seed);

    drop(app);
    let restarted = self::app(&f);
    let (status, v) = call(&restarted, "GET", "/api/boards/ideas", None).await;
    assert_eq!(status, StatusCode::OK);
    let pins = v["pins"].as_array().unwrap();
    assert_eq!(pins.len(), 3);
    assert_eq!(pins[0]["ref"], id.as_str());
    assert_eq!(pins[2]["ref"], hash.as_str());
    assert_eq!(pins[2]["session"], "pinner");
    let (status, _) = call(&restarted, "GET", "/api/boards/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn images_are_served_uncropped() {
    let f = fixture();
    let app = app(&f);
    let index = CorpusIndex::open(&f.corpus).unwrap();
    let r = index.manifest().records.iter().find(|r| r.crop_fraction > 0.0).unwrap();
    let (status, bytes) =
        send(&app, Request::builder().uri(format!("/api/image/{}", r.id)).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, std::fs::read(f.corpus.join(&r.path)).unwrap());
    let (status, _) = send(&app, Request::builder().uri("/api/image/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn error_statuses() {
    let f = fixture();
    let app = app(&f);
    let (status, v) = upload(&app, "e", b"definitely not an image").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "undecodable_image");
    let (status, _) = call(&app, "POST", "/api/search", Some(json!({ "wrong": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let no_index = router(Arc::new(Engine::new(None, &f.boards).unwrap()), None);
    let (status, v) = search_id(&no_index, "e", "x").await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "index_unavailable");
    let (status, _) = call(&no_index, "POST", "/api/boards/still-works", None).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn small_corpus_underfills() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig::parse("[forest]\nn_trees = 3\nleaf_size = 2\n[palette]\ncount = 7\nseed = 5\n").unwrap();
    let corpus = dir.path().join("c");
    build_corpus(&cfg, dir.path(), &corpus).unwrap();
    let index = CorpusIndex::open(&corpus).unwrap();
    let app = router(Arc::new(Engine::new(Some(index), &dir.path().join("b")).unwrap()), None);
    let png = RasterImage::filled(20, 20, [200, 10, 10]).encode_png().unwrap();
    let (status, v) = upload(&app, "s", &png).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["set"]["results"].as_array().unwrap().len(), 7);
    assert_eq!(v["set"]["requested"], 10);
}
