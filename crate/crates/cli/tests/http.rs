use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use methodforge::orchestrator::QueryResponse;
use methodforge::{Config, Orchestrator};
use methodforge_cli::api::{router, ErrorBody};
use serde_json::{json, Value};
use tower::ServiceExt;

const CS1: &str = "When we create a project, then we try to create another project. Please tell how to re-create a project in SuHongKey software.";
const CS2: &str = "For this kind of question, you should first check whether the SuHongKey software exists or not.";
const CS3: &str = "When we create a project, then we try to create another project. Please tell how to re-create a project in HongHanKey software.";
const ICS: &str = "When working with the software, you may need to duplicate an existing project for modification or testing purposes. Our target is the HongHanKey software. We want to verify on it. Please tell how to use this software for verifying the parameter impact.";
const ICS2: &str = "Please check whether the target software exists or not. If it does not exist, do not proceed with further output—just inform the user.";

fn app() -> Router {
    let orchestrator = Orchestrator::from_config(Config::default()).unwrap();
    router(Arc::new(Mutex::new(orchestrator)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, v) = call(app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn query(app: &Router, session: &str, text: &str) -> QueryResponse {
    let (status, v) = call(app, "POST", &format!("/sessions/{session}/query"), Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

#[tokio::test]
async fn healthz_ok() {
    let (status, v) = call(&app(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn unknown_session_is_404() {
    let (status, v) = call(&app(), "POST", "/sessions/s99/query", Some(json!({ "text": "hi" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let err: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(err.code, "session_not_found");
}

#[tokio::test]
async fn malformed_body_is_400() {
    let app = app();
    let s = new_session(&app).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{s}/query"), Some(json!({ "txt": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_body");
    let (status, v) = call(&app, "POST", &format!("/sessions/{s}/query"), Some(json!({ "text": "  " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "empty_query");
}

#[tokio::test]
async fn http_flow_matches_direct_calls() {
    let app = app();
    let mut over_http = Vec::new();
    for text in [CS1, CS2, CS3] {
        let s = new_session(&app).await;
        over_http.push(query(&app, &s, text).await);
    }
    let mut direct = Orchestrator::from_config(Config::default()).unwrap();
    let mut expected = Vec::new();
    for text in [CS1, CS2, CS3] {
        let s = direct.create_session(None);
        expected.push(direct.handle_query(&s, text).unwrap());
    }
    assert_eq!(serde_json::to_vec(&over_http).unwrap(), serde_json::to_vec(&expected).unwrap());
    assert!(over_http[0].fallback_used);
    assert!(!over_http[2].fallback_used);
}

#[tokio::test]
async fn ranking_over_http() {
    let app = app();
    for text in [CS2, ICS2] {
        let s = new_session(&app).await;
        query(&app, &s, text).await;
    }
    let s = new_session(&app).await;
    let r = query(&app, &s, ICS).await;
    assert_eq!(r.outputs.len(), 2);
    let winner = r.outputs[0].method_id.clone().unwrap();
    let uri = format!("/sessions/{s}/rank");
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "turn": r.turn, "ordering": [1, 2] }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, v) = call(&app, "POST", &uri, Some(json!({ "turn": r.turn, "ordering": [1, 2] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "already_ranked");
    let (status, v) = call(&app, "POST", &uri, Some(json!({ "turn": 7, "ordering": [1] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "turn_not_found");

    let (_, v) = call(&app, "GET", &format!("/methods/{winner}"), None).await;
    let eff: f64 = v["summary"]["score"]["effectiveness"].as_str().unwrap().parse().unwrap();
    assert!((eff - 0.65).abs() < 1e-12);
    let (_, v) = call(&app, "GET", &format!("/sessions/{s}"), None).await;
    assert_eq!(v["turns"][0]["ordering"], json!([1, 2]));
}

#[tokio::test]
async fn method_listing_deletion_and_reset() {
    let app = app();
    let s = new_session(&app).await;
    query(&app, &s, CS2).await;
    let (status, v) = call(&app, "GET", "/methods", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 1);
    let id = list[0]["id"].as_str().unwrap().to_string();
    assert!(list[0]["node"].is_u64());

    let (status, v) = call(&app, "GET", &format!("/methods/{}", &id[..10]), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["method"]["id"], id.as_str());

    let (status, v) = call(&app, "DELETE", &format!("/methods/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["removed"], id.as_str());
    let (status, v) = call(&app, "DELETE", &format!("/methods/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "method_not_found");

    query(&app, &s, CS2).await;
    let (status, _) = call(&app, "POST", "/repository/reset", None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, v) = call(&app, "GET", "/methods", None).await;
    assert_eq!(v, json!([]));
}

#[tokio::test]
async fn sessions_can_carry_a_user() {
    let app = app();
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({ "user": "ann" }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let s = v["session_id"].as_str().unwrap().to_string();
    query(&app, &s, CS2).await;
    let (_, v) = call(&app, "GET", "/methods", None).await;
    assert_eq!(v[0]["scope"], json!({ "user": "ann" }));
}

#[tokio::test]
async fn serves_on_a_socket() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app()).await.unwrap() });
    let reply = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut buf = String::new();
        stream.read_to_string(&mut buf).unwrap();
        buf
    })
    .await
    .unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.ends_with("{\"status\":\"ok\"}"));
}
