use std::net::SocketAddr;

use axum::routing::post;
use axum::{Json, Router};
use pen_core::normalize::{normalize_external, Endpoint, ExternalRequest, LinkKind};
use serde_json::{json, Value};

/// Serves `route` on an ephemeral port from a background runtime.
fn spawn(route: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, route).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn requests() -> Vec<ExternalRequest> {
    ["dñs meus", "ꝯtra ⁊ q̃", "", "xiiij. uie"]
        .iter()
        .enumerate()
        .map(|(k, t)| ExternalRequest {
            id: format!("r{k}"),
            text: t.to_string(),
            language: "lat".into(),
        })
        .collect()
}

#[test]
fn http_echo_returns_the_input() {
    let addr = spawn(Router::new().route("/normalize", post(|Json(v): Json<Value>| async move { Json(v) })));
    let ep = Endpoint::Http {
        url: format!("http://{addr}/normalize"),
        timeout_ms: 5_000,
        max_in_flight: 3,
    };
    let reqs = requests();
    let out = normalize_external(&reqs, &ep).unwrap();
    assert_eq!(out.len(), reqs.len());
    for (r, o) in reqs.iter().zip(&out) {
        assert_eq!(o.text, r.text);
        assert!(o.spans.iter().all(|s| s.kind == LinkKind::Opaque));
    }
}

#[test]
fn http_empty_output_is_flagged() {
    let addr = spawn(Router::new().route(
        "/n",
        post(|Json(v): Json<Value>| async move { Json(json!({"id": v["id"], "text": ""})) }),
    ));
    let ep = Endpoint::Http {
        url: format!("http://{addr}/n"),
        timeout_ms: 5_000,
        max_in_flight: 2,
    };
    let reqs = requests();
    let out = normalize_external(&reqs, &ep).unwrap();
    for (r, o) in reqs.iter().zip(&out) {
        assert!(o.text.is_empty());
        // An empty input legitimately yields an empty output.
        assert_eq!(o.warnings.is_empty(), r.text.is_empty(), "{}", r.id);
    }
}

#[test]
fn http_error_status_names_the_input() {
    let addr = spawn(Router::new().route(
        "/n",
        post(|| async { (axum::http::StatusCode::INTERNAL_SERVER_ERROR, "boom") }),
    ));
    let ep = Endpoint::Http {
        url: format!("http://{addr}/n"),
        timeout_ms: 5_000,
        max_in_flight: 1,
    };
    match normalize_external(&requests(), &ep) {
        Err(pen_core::Error::EndpointFailure { id, .. }) => assert_eq!(id, "r0"),
        other => panic!("{other:?}"),
    }
}
