use std::path::Path;
use std::sync::Arc;

use acdg::diffcore::{DenoiserConfig, DiffusionModel, ModelCard, Variant};
use acdg::inferpipe::{AUTOENCODER_FILE, DENOISER_FILE};
use acdg::latentcore::{Autoencoder, AutoencoderConfig};
use acdg::raster::sha256_hex;
use acdg::synthworld::Category;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;
use tryon_service::config::ServiceConfig;
use tryon_service::{router, AppState};

fn write_checkpoint(dir: &Path) {
    let ae = Autoencoder::new(AutoencoderConfig { widths: [4, 8, 8], ..Default::default() });
    let mut card = ModelCard::new(Variant::Acdg);
    card.denoiser = DenoiserConfig { base_width: 8, groups: 2, embed_dim: 8, time_dim: 8, ..Default::default() };
    std::fs::create_dir_all(dir).unwrap();
    ae.save(&dir.join(AUTOENCODER_FILE), &Default::default()).unwrap();
    DiffusionModel::new(card).unwrap().save(&dir.join(DENOISER_FILE), &Default::default()).unwrap();
}

struct Fixture {
    state: Arc<AppState>,
    _tmp: tempfile::TempDir,
}

fn fixture(with_checkpoint: bool, queue_capacity: usize) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("ckpt");
    if with_checkpoint {
        write_checkpoint(&ckpt);
    }
    let config = ServiceConfig {
        checkpoint_dir: ckpt,
        runs_dir: tmp.path().join("runs"),
        queue_capacity,
        avatars: 3,
        garment_seeds: 3,
        ..Default::default()
    };
    Fixture { state: AppState::new(config).unwrap(), _tmp: tmp }
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn garment_of(state: &AppState, cat: Category) -> String {
    state.catalog.garments.values().find(|(g, _)| g.category == cat).unwrap().1.id.clone()
}

fn top_bottom(state: &AppState, avatar: u64) -> Value {
    json!({
        "avatar": avatar,
        "layers": [
            { "garment": garment_of(state, Category::Bottom) },
            { "garment": garment_of(state, Category::Top) }
        ]
    })
}

fn check_raster(r: &Value) {
    let bytes = base64::engine::general_purpose::STANDARD.decode(r["png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
    assert_eq!(sha256_hex(&bytes), r["sha256"].as_str().unwrap());
}

#[tokio::test]
async fn catalog_lists_avatars_and_garments_with_addressed_thumbnails() {
    let f = fixture(false, 2);
    let (st, avatars) = call(&f.state, "GET", "/avatars", None).await;
    assert_eq!(st, StatusCode::OK);
    let avatars = avatars.as_array().unwrap();
    assert_eq!(avatars.len(), 3);
    check_raster(&avatars[0]["thumbnail"]);
    let (st, garments) = call(&f.state, "GET", "/garments", None).await;
    assert_eq!(st, StatusCode::OK);
    let garments = garments.as_array().unwrap();
    assert!(garments.len() >= 6);
    for g in garments {
        check_raster(&g["thumbnail"]);
        assert!(g["id"].as_str().unwrap().starts_with('g'));
    }
}

#[tokio::test]
async fn compose_is_stable_and_order_sensitive() {
    let f = fixture(false, 2);
    let body = top_bottom(&f.state, 1);
    let (st, a) = call(&f.state, "POST", "/compose", Some(body.clone())).await;
    assert_eq!(st, StatusCode::OK, "{a}");
    check_raster(&a["control"]);
    let (_, b) = call(&f.state, "POST", "/compose", Some(body.clone())).await;
    assert_eq!(a["control_hash"], b["control_hash"]);
    let mut swapped = body.clone();
    swapped["layers"].as_array_mut().unwrap().reverse();
    let (st, c) = call(&f.state, "POST", "/compose", Some(swapped)).await;
    assert_eq!(st, StatusCode::OK, "{c}");
    assert_ne!(a["control_hash"], c["control_hash"]);
    assert_ne!(a["outfit_digest"], c["outfit_digest"]);
}

#[tokio::test]
async fn invalid_outfits_get_structured_4xx() {
    let f = fixture(false, 2);
    let dress = garment_of(&f.state, Category::Dress);
    let top = garment_of(&f.state, Category::Top);
    let body = json!({ "avatar": 0, "layers": [{ "garment": dress }, { "garment": top }] });
    let (st, v) = call(&f.state, "POST", "/compose", Some(body)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "invalid-outfit");
    assert!(v["issues"].as_array().unwrap().iter().any(|i| i["code"] == "dress-conflict"));

    let body = json!({ "avatar": 0, "layers": [{ "garment": "gnothere" }] });
    let (st, v) = call(&f.state, "POST", "/compose", Some(body)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["issues"][0]["code"], "unknown-garment");
    assert_eq!(v["issues"][0]["layer"], 0);

    let body = json!({ "avatar": 99, "layers": [] });
    let (st, v) = call(&f.state, "POST", "/compose", Some(body)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["issues"][0]["code"], "unknown-avatar");

    let body = json!({ "avatar": 0, "layers": [{ "garment": top, "slot": "bottom" }] });
    let (_, v) = call(&f.state, "POST", "/compose", Some(body)).await;
    assert_eq!(v["issues"][0]["code"], "slot-mismatch");

    let (st, v) = call(&f.state, "POST", "/compose", Some(json!({ "layers": 3 }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad-request");
}

#[tokio::test]
async fn missing_checkpoint_is_503_with_a_hint() {
    let f = fixture(false, 2);
    let mut body = top_bottom(&f.state, 0);
    body["seed"] = json!(1);
    let (st, v) = call(&f.state, "POST", "/generate", Some(body)).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "checkpoint-unavailable");
    assert!(v["hint"].as_str().unwrap().contains("diffcore train"));
    assert!(v["message"].as_str().unwrap().contains("not found"));
}

#[tokio::test]
async fn invalid_outfit_is_rejected_before_the_checkpoint_is_needed() {
    let f = fixture(false, 2);
    let body = json!({ "avatar": 0, "layers": [{ "garment": "gnothere" }], "seed": 0 });
    let (st, _) = call(&f.state, "POST", "/generate", Some(body)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn generate_uses_the_composed_control_and_is_reproducible() {
    let f = fixture(true, 2);
    let outfit = top_bottom(&f.state, 2);
    let (_, composed) = call(&f.state, "POST", "/compose", Some(outfit.clone())).await;
    let mut body = outfit.clone();
    body["seed"] = json!(5);
    let (st, a) = call(&f.state, "POST", "/generate", Some(body.clone())).await;
    assert_eq!(st, StatusCode::OK, "{a}");
    assert_eq!(a["control_hash"], composed["control_hash"]);
    assert_eq!(a["evaluations"], 20);
    assert_eq!(a["kind"], "full");
    let (_, b) = call(&f.state, "POST", "/generate", Some(body.clone())).await;
    assert_eq!(a["id"], b["id"]);
    assert_eq!(a["image_sha256"], b["image_sha256"]);
    body["seed"] = json!(6);
    let (_, c) = call(&f.state, "POST", "/generate", Some(body)).await;
    assert_ne!(a["id"], c["id"]);
    assert_ne!(a["image_sha256"], c["image_sha256"]);

    let id = a["id"].as_str().unwrap();
    let (st, run) = call(&f.state, "GET", &format!("/runs/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(run["image_sha256"], a["image_sha256"]);
    let bytes = base64::engine::general_purpose::STANDARD.decode(run["png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(sha256_hex(&bytes), run["image_sha256"].as_str().unwrap());
    let (st, _) = call(&f.state, "GET", "/runs/abc123", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&f.state, "GET", "/runs/..%2Fx", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn zoom_validates_the_window() {
    let f = fixture(true, 2);
    let mut body = top_bottom(&f.state, 0);
    body["seed"] = json!(1);
    body["window"] = json!({ "x": 16, "y": 24, "w": 32, "h": 48 });
    let (st, v) = call(&f.state, "POST", "/zoom", Some(body.clone())).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["kind"], "zoom");
    assert_eq!(v["evaluations"], 20);
    let (_, full) = call(&f.state, "POST", "/generate", Some(body.clone())).await;
    assert_ne!(v["id"], full["id"]);
    for bad in [json!({ "x": 40, "y": 24, "w": 32, "h": 48 }), json!({ "x": 0, "y": 0, "w": 32, "h": 32 })] {
        body["window"] = bad;
        let (st, v) = call(&f.state, "POST", "/zoom", Some(body.clone())).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(v["issues"][0]["code"], "invalid-window");
    }
}

#[tokio::test]
async fn full_queue_returns_429() {
    let f = fixture(true, 1);
    let held = f.state.queue.clone().try_acquire_owned().unwrap();
    let mut body = top_bottom(&f.state, 0);
    body["seed"] = json!(1);
    let (st, v) = call(&f.state, "POST", "/generate", Some(body.clone())).await;
    assert_eq!(st, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(v["error"], "queue-full");
    drop(held);
    let (st, _) = call(&f.state, "POST", "/generate", Some(body)).await;
    assert_eq!(st, StatusCode::OK);
}

#[test]
fn env_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("service.toml");
    std::fs::write(&path, "port = 9000\ncheckpoint_dir = \"a\"\nqueue_capacity = 7\n").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut c: ServiceConfig = toml::from_str(&text).unwrap();
    assert_eq!((c.port, c.queue_capacity), (9000, 7));
    c.apply_env(|k| match k {
        "TRYON_PORT" => Some("9100".into()),
        "TRYON_CHECKPOINT_DIR" => Some("/ckpt/b".into()),
        "TRYON_DATASET_DIR" => Some("/data".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!(c.port, 9100);
    assert_eq!(c.checkpoint_dir, Path::new("/ckpt/b"));
    assert_eq!(c.dataset_dir.as_deref(), Some(Path::new("/data")));
    assert_eq!(c.queue_capacity, 7);
    assert!(c.apply_env(|k| (k == "TRYON_PORT").then(|| "x".into())).is_err());
}
