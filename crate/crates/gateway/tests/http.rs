use std::path::Path;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use contestable::data::{generate_synthetic, SyntheticSpec};
use contestable::jointnet::{JointNetwork, NetworkSpec, Task};
use gateway::config::RunConfig;
use gateway::server::{router, AppState, SessionState, WireStatus};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path) -> Router {
    router(AppState::new(RunConfig::default(), dir.to_path_buf()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn raw(app: &Router, uri: &str, body: &'static str) -> StatusCode {
    let req = Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

fn inline_dataset(seed: u64) -> Value {
    let syn = generate_synthetic(&SyntheticSpec::new(4, 1, 50, seed)).unwrap();
    let d = &syn.data;
    let rows: Vec<Vec<f64>> = (0..d.rows()).map(|r| d.values().row(r).to_vec()).collect();
    json!({ "columns": d.names(), "rows": rows })
}

async fn create(app: &Router, config: Value) -> SessionState {
    let body = json!({ "dataset": inline_dataset(3), "config": config, "tau": 0.0 });
    let (status, v) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn wait_until_settled(app: &Router, id: &str) -> SessionState {
    for _ in 0..600 {
        let (status, v) = call(app, Method::GET, &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let s: SessionState = serde_json::from_value(v).unwrap();
        if s.status != WireStatus::Training {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("session {id} never finished training");
}

#[tokio::test]
async fn health_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let (status, v) = call(&app(dir.path()), Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({ "status": "ok" }));
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({ "train": { "max_steps": 150 } })).await;
    assert_eq!(s.status, WireStatus::Open);
    assert_eq!(s.tau, 0.0);
    assert_eq!(s.history.len(), 1);
    assert_eq!(s.graph.graph.nodes.len(), 4);
    assert_eq!(s.graph.adjacency.len(), 4);
    assert!(!s.graph.graph.edges.is_empty());
    let id = s.session_id.clone();

    // Raising the threshold only re-extracts.
    let top = s.graph.weights.iter().map(|w| w.w).fold(0.0, f64::max);
    let (status, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/revise"),
        Some(json!({ "kind": "set-tau", "tau": top })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let raised: SessionState = serde_json::from_value(v).unwrap();
    assert!(raised.graph.graph.edges.len() < s.graph.graph.edges.len());
    assert!(!raised.history[1].retrained);
    assert_eq!(raised.graph.adjacency, s.graph.adjacency);

    let (_, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/revise"),
        Some(json!({ "kind": "set-tau", "tau": 0.0 })),
    )
    .await;
    let lowered: SessionState = serde_json::from_value(v).unwrap();
    let cut = lowered.graph.graph.edges[0];

    let (status, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/revise"),
        Some(json!({ "kind": "cut-edges", "removed_edges": [cut] })),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["status"], "training");
    let after = wait_until_settled(&app, &id).await;
    assert_eq!(after.status, WireStatus::Open);
    assert!(after.error.is_none());
    assert!(!after.graph.graph.edges.contains(&cut));
    assert_eq!(after.banned, vec![cut]);
    assert_eq!(after.graph.adjacency[cut[0]][cut[1]], 0.0);
    let last = after.history.last().unwrap();
    assert!(last.retrained);
    assert!(!last.injected.as_ref().unwrap().edges.contains(&cut));
    assert_eq!(after.metrics.edges, after.graph.graph.edges.len());

    let (status, v) = call(&app, Method::POST, &format!("/sessions/{id}/accept"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "accepted");
    for file in ["checkpoint.json", "history.json", "graph.json"] {
        assert!(dir.path().join(&id).join(file).is_file(), "{file}");
    }
    let (status, v) = call(&app, Method::POST, &format!("/sessions/{id}/accept"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(v["error"].is_string());
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/revise"),
        Some(json!({ "kind": "set-tau", "tau": 0.1 })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn revising_while_training_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let syn = generate_synthetic(&SyntheticSpec::new(4, 1, 50, 5)).unwrap();
    let spec = NetworkSpec {
        input_scale: 1.0,
        ..NetworkSpec::new(3, Task::Regression, 4)
    };
    let ckpt = dir.path().join("ckpt.json");
    JointNetwork::<f64>::new(&spec).unwrap().save_checkpoint(&ckpt).unwrap();
    let csv = dir.path().join("data.csv");
    syn.data.write_csv(&csv).unwrap();

    let app = app(dir.path());
    let body = json!({
        "dataset": { "path": csv },
        "checkpoint": ckpt,
        "tau": 0.0,
        "config": { "train": { "max_steps": 20000, "patience": 19999 } },
    });
    let (status, v) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let s: SessionState = serde_json::from_value(v).unwrap();
    let id = s.session_id;
    let cut = json!({ "kind": "cut-edges", "removed_edges": [s.graph.graph.edges[0]] });
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/revise"), Some(cut.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (tau_status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/revise"),
        Some(json!({ "kind": "set-tau", "tau": 0.2 })),
    )
    .await;
    let (cut_status, _) = call(&app, Method::POST, &format!("/sessions/{id}/revise"), Some(cut)).await;
    let (accept_status, _) = call(&app, Method::POST, &format!("/sessions/{id}/accept"), None).await;
    let (_, polled) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    let settled = wait_until_settled(&app, &id).await;
    assert_eq!(tau_status, StatusCode::CONFLICT);
    assert_eq!(cut_status, StatusCode::CONFLICT);
    assert_eq!(accept_status, StatusCode::CONFLICT);
    assert_eq!(polled["status"], "training");
    assert_eq!(settled.status, WireStatus::Open);
    assert_eq!(settled.history.len(), 2);
}

#[tokio::test]
async fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    assert_eq!(raw(&app, "/sessions", "{not json").await, StatusCode::BAD_REQUEST);
    assert_eq!(
        raw(&app, "/sessions/nope/revise", r#"{"kind":"set-tau","tau":0.1}"#).await,
        StatusCode::NOT_FOUND
    );

    let ragged = json!({ "dataset": { "columns": ["Y", "X1"], "rows": [[1.0, 2.0], [3.0]] } });
    assert_eq!(call(&app, Method::POST, "/sessions", Some(ragged)).await.0, StatusCode::BAD_REQUEST);
    let missing = json!({ "dataset": { "path": dir.path().join("absent.csv") } });
    assert_eq!(
        call(&app, Method::POST, "/sessions", Some(missing)).await.0,
        StatusCode::BAD_REQUEST
    );
    let bad_config = json!({ "dataset": inline_dataset(1), "config": { "train": { "bogus": 1 } } });
    assert_eq!(
        call(&app, Method::POST, "/sessions", Some(bad_config)).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_revisions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({ "train": { "max_steps": 50, "patience": 5 } })).await;
    let uri = format!("/sessions/{}/revise", s.session_id);
    assert_eq!(raw(&app, &uri, r#"{"kind":"rewire"}"#).await, StatusCode::BAD_REQUEST);
    assert_eq!(raw(&app, &uri, r#"{"kind":"set-tau","tau":-1}"#).await, StatusCode::BAD_REQUEST);
    assert_eq!(
        raw(&app, &uri, r#"{"kind":"cut-edges","removed_edges":[]}"#).await,
        StatusCode::BAD_REQUEST
    );
    let edges = &s.graph.graph.edges;
    let absent = (0..4)
        .flat_map(|i| (0..4).map(move |k| [i, k]))
        .find(|e| e[0] != e[1] && !edges.contains(e))
        .unwrap();
    let (status, _) = call(
        &app,
        Method::POST,
        &uri,
        Some(json!({ "kind": "cut-edges", "removed_edges": [absent] })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, v) = call(&app, Method::GET, &format!("/sessions/{}", s.session_id), None).await;
    assert_eq!(v["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn sessions_load_csv_files_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let syn = generate_synthetic(&SyntheticSpec::new(4, 1, 50, 8)).unwrap();
    let csv = dir.path().join("data.csv");
    syn.data.write_csv(&csv).unwrap();
    let net = JointNetwork::<f64>::new(&NetworkSpec::new(3, Task::Regression, 2)).unwrap();
    let ckpt = dir.path().join("ckpt.json");
    net.save_checkpoint(&ckpt).unwrap();

    let app = app(dir.path());
    let body = json!({ "dataset": { "path": csv }, "checkpoint": ckpt, "tau": 0.0 });
    let (status, v) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let s: SessionState = serde_json::from_value(v).unwrap();
    let expected = net.compute_adjacency();
    for i in 0..4 {
        for k in 0..4 {
            assert_eq!(s.graph.adjacency[i][k], expected.get(i, k));
        }
    }
}
