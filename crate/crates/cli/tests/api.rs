use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pen_cli::{router, AppState, TOKEN_HEADER};
use pen_core::abbrev::MarkerTable;
use pen_core::review::{sample_gold, ReviewStats, ReviewStore, SampleSpec, DECISIONS_FILE};
use pen_core::synth::{planted_substitution_pairs, SubstitutionSpec};
use serde_json::{json, Value};
use tower::ServiceExt;

fn store_with(dir: &std::path::Path, n: usize) -> ReviewStore {
    let pairs = planted_substitution_pairs(&SubstitutionSpec {
        pairs_per_language: 20,
        tokens_per_pair: 12,
        ..SubstitutionSpec::default()
    });
    let (sample, report) = sample_gold(
        &pairs,
        &SampleSpec {
            total: Some(n),
            ..SampleSpec::default()
        },
    );
    assert_eq!(report.size, n);
    let mut store = ReviewStore::open(dir).unwrap();
    store.add_pairs(&sample).unwrap();
    store
}

fn app(dir: &std::path::Path, n: usize, token: Option<&str>) -> Router {
    router(AppState::new(store_with(dir, n), MarkerTable::default(), token.map(String::from)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            Body::from(b.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn pending_list_has_the_sampled_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 17, None);
    let (status, list) = call(&app, "GET", "/api/pairs?status=pending", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 17);
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    let stats: ReviewStats = serde_json::from_value(stats).unwrap();
    assert_eq!((stats.total, stats.pending), (17, 17));
}

#[tokio::test]
async fn accepting_removes_one_from_the_queue() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 10, None);
    let (_, list) = call(&app, "GET", "/api/pairs?status=pending", None).await;
    let id = list[0]["id"].as_str().unwrap().to_string();
    let (status, decision) = call(
        &app,
        "POST",
        &format!("/api/pairs/{id}/decision"),
        Some(json!({"status": "accepted", "annotator": "ab"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{decision}");
    assert_eq!(decision["seq"], 0);
    let (_, list) = call(&app, "GET", "/api/pairs?status=pending", None).await;
    assert_eq!(list.as_array().unwrap().len(), 9);
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!((stats["pending"].as_u64(), stats["accepted"].as_u64()), (Some(9), Some(1)));
    // Durable before the reply: the log line is already on disk.
    let log = std::fs::read_to_string(dir.path().join(DECISIONS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[tokio::test]
async fn edited_target_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 5, None);
    let (_, list) = call(&app, "GET", "/api/pairs", None).await;
    let id = list[2]["id"].as_str().unwrap().to_string();
    let corrected = "con\u{303}sul  dño\u{304} ꝯtra ⁊ q\u{303}\u{301}.\n";
    let (status, _) = call(
        &app,
        "POST",
        &format!("/api/pairs/{id}/decision"),
        Some(json!({"status": "edited", "corrected_target": corrected, "notes": "fixed", "annotator": "ab"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, pair) = call(&app, "GET", &format!("/api/pairs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(pair["status"], "edited");
    assert_eq!(pair["corrected_target"].as_str().unwrap().as_bytes(), corrected.as_bytes());
    assert_eq!(pair["notes"], "fixed");

    // A fresh store over the same directory sees the same state.
    let reopened = router(AppState::new(ReviewStore::open(dir.path()).unwrap(), MarkerTable::default(), None));
    let (_, again) = call(&reopened, "GET", &format!("/api/pairs/{id}"), None).await;
    assert_eq!(again, pair);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3, None);
    let (_, list) = call(&app, "GET", "/api/pairs", None).await;
    let id = list[0]["id"].as_str().unwrap().to_string();
    let uri = format!("/api/pairs/{id}/decision");

    let (status, body) = call(&app, "GET", "/api/pairs/nope", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_pair")));

    let (status, body) = call(&app, "POST", &uri, Some(json!({"status": "edited", "annotator": "ab"}))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_decision")));

    let (status, _) = call(&app, "GET", "/api/pairs?status=maybe", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"status": "rejected", "annotator": "ab", "expected_status": "accepted"})),
    )
    .await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("stale_status")));

    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(stats["decisions"], 0);
}

#[tokio::test]
async fn token_is_enforced_when_set() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 2, Some("s3cret"));
    let (status, _) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/stats").header(TOKEN_HEADER, "s3cret").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
    let req = Request::get("/api/stats").header(TOKEN_HEADER, "wrong").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn marker_table_is_exported() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1, None);
    let (status, body) = call(&app, "GET", "/api/markers", None).await;
    assert_eq!(status, StatusCode::OK);
    let table: MarkerTable = serde_json::from_value(body).unwrap();
    assert_eq!(table, MarkerTable::default());
    assert!(table.contains('\u{303}'));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_decisions_are_all_logged() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 8, None);
    let (_, list) = call(&app, "GET", "/api/pairs", None).await;
    let ids: Vec<String> = list.as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap().into()).collect();
    let mut tasks = Vec::new();
    for round in 0..5 {
        for id in &ids {
            let app = app.clone();
            let uri = format!("/api/pairs/{id}/decision");
            let status = if round % 2 == 0 { "accepted" } else { "rejected" };
            tasks.push(tokio::spawn(async move {
                call(&app, "POST", &uri, Some(json!({"status": status, "annotator": "ab"}))).await.0
            }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let store = ReviewStore::open(dir.path()).unwrap();
    assert_eq!(store.log().len(), 40);
    let seqs: Vec<u64> = store.log().iter().map(|d| d.seq).collect();
    assert_eq!(seqs, (0..40).collect::<Vec<_>>());
}
