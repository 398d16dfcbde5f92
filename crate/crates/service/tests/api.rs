use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use aeromine_service::{router, Registry};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn manual_config() -> Value {
    json!({
        "positions": 2,
        "budget": 8,
        "seeds_per_position": 2,
        "wind_speeds": [1.0, 2.0],
        "oracle": "manual",
    })
}

fn synthetic_config(budget: u64) -> Value {
    json!({
        "positions": 2,
        "budget": budget,
        "seeds_per_position": 3,
        "proposals_per_iteration": 2,
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
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
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn create(app: &Router, config: Value, key: Option<&str>) -> String {
    let (status, body) = call(app, "POST", "/api/v1/runs", Some(json!({ "config": config })), key).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["run_id"].as_str().unwrap().to_string()
}

/// Polls until the pending list has `n` entries.
async fn pending(app: &Router, run: &str, n: usize) -> Vec<Value> {
    for _ in 0..2000 {
        let (_, body) = call(app, "GET", &format!("/api/v1/runs/{run}/pending"), None, None).await;
        let list = body["pending"].as_array().cloned().unwrap_or_default();
        if list.len() == n {
            return list;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("pending list never reached {n}");
}

async fn until_status(app: &Router, run: &str, status: &str) -> Value {
    for _ in 0..4000 {
        let (_, body) = call(app, "GET", &format!("/api/v1/runs/{run}"), None, None).await;
        if body["status"] == status {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("run {run} never became {status}");
}

fn setup(dir: &Path) -> (Arc<Registry>, Router) {
    let registry = Arc::new(Registry::open(dir).unwrap());
    (registry.clone(), router(registry))
}

fn journal_lines(dir: &Path, run: &str) -> usize {
    std::fs::read_to_string(dir.join(format!("{run}.jsonl"))).unwrap().lines().count()
}

#[tokio::test(flavor = "multi_thread")]
async fn manual_run_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let (registry, app) = setup(dir.path());
    let run = create(&app, manual_config(), None).await;

    let (status, state) = call(&app, "GET", &format!("/api/v1/runs/{run}"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(["running", "awaiting_measurement"].contains(&state["status"].as_str().unwrap()));

    let list = pending(&app, &run, 4).await;
    let ids: Vec<&str> = list.iter().map(|p| p["pending_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["r0-p1-s0", "r0-p1-s1", "r0-p2-s0", "r0-p2-s1"]);
    assert_eq!(list[0]["configuration"]["wind_speeds"], json!([1.0, 2.0]));
    until_status(&app, &run, "awaiting_measurement").await;

    // 2 wind speeds x 2 turbines: mean of per-speed sums (1 + 2) and (8 + 16)
    let submit = json!({ "pending_id": "r0-p1-s0", "readings": [[1.0, 2.0], [8.0, 16.0]], "idempotency_key": "k1" });
    let (status, ack) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(submit.clone()), None).await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack["fitness"], json!(13.5));
    assert_eq!(ack["record_id"], json!(1));
    assert_eq!(ack["replayed"], json!(false));

    let lines = journal_lines(dir.path(), &run);
    let (status, again) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(submit), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["record_id"], ack["record_id"]);
    assert_eq!(again["fitness"], ack["fitness"]);
    assert_eq!(again["replayed"], json!(true));
    assert_eq!(journal_lines(dir.path(), &run), lines);

    let other_key = json!({ "pending_id": "r0-p1-s0", "readings": [[1.0, 2.0], [8.0, 16.0]], "idempotency_key": "k2" });
    let (status, _) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(other_key), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let negative = json!({ "pending_id": "r0-p1-s1", "readings": [[-0.5, 2.0], [3.0, -1.0]] });
    let (status, ack) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(negative), Some("k3")).await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack["fitness"], json!(1.75));

    let wrong_shape = json!({ "pending_id": "r0-p2-s0", "readings": [[1.0, 2.0, 3.0]] });
    let (status, err) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(wrong_shape), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"]["code"], "dimension_mismatch");
    assert!(!err["error"]["issues"].as_array().unwrap().is_empty());

    let unknown = json!({ "pending_id": "r9-p1-s0", "readings": [[1.0, 2.0], [1.0, 2.0]] });
    let (status, _) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(unknown), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, archive) = call(&app, "GET", &format!("/api/v1/runs/{run}/archive?position=1"), None, None).await;
    assert_eq!(archive["records"].as_array().unwrap().len(), 2);
    let (status, _) = call(&app, "GET", &format!("/api/v1/runs/{run}/archive?position=3"), None, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, model) = call(&app, "GET", &format!("/api/v1/runs/{run}/surrogate/1"), None, None).await;
    assert_eq!(status, StatusCode::OK, "{model}");
    assert_eq!(model["points"].as_array().unwrap().len(), 2);
    assert_eq!(model["input_dim"], json!(9));
    let (status, _) = call(&app, "GET", &format!("/api/v1/runs/{run}/surrogate/2"), None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    registry.shutdown();
}

#[tokio::test]
async fn lookups_of_unknown_runs_fail_with_404() {
    let dir = tempfile::tempdir().unwrap();
    let (_registry, app) = setup(dir.path());
    for uri in ["/api/v1/runs/nope", "/api/v1/runs/nope/pending", "/api/v1/runs/nope/archive", "/api/v1/runs/nope/events"] {
        let (status, body) = call(&app, "GET", uri, None, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["error"]["code"], "not_found");
    }
}

#[tokio::test]
async fn invalid_configs_list_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let (_registry, app) = setup(dir.path());
    let config = json!({ "positions": 9, "budget": 1, "wind_speeds": [] });
    let (status, body) = call(&app, "POST", "/api/v1/runs", Some(json!({ "config": config })), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let subjects: Vec<&str> = body["error"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["subject"].as_str().unwrap())
        .collect();
    assert!(subjects.contains(&"positions"), "{subjects:?}");
    assert!(subjects.contains(&"wind_speeds"), "{subjects:?}");
    assert!(subjects.len() >= 3, "{subjects:?}");

    let (status, body) = call(&app, "POST", "/api/v1/runs", Some(json!({ "config": { "bugdet": 3 } })), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("bugdet"));
}

#[tokio::test(flavor = "multi_thread")]
async fn creating_a_run_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (registry, app) = setup(dir.path());
    let first = create(&app, manual_config(), Some("launch-1")).await;
    let (status, body) = call(&app, "POST", "/api/v1/runs", Some(json!({ "config": manual_config() })), Some("launch-1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["run_id"], json!(first));
    assert_eq!(body["replayed"], json!(true));
    let (_, list) = call(&app, "GET", "/api/v1/runs", None, None).await;
    assert_eq!(list["runs"].as_array().unwrap().len(), 1);
    registry.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn restarting_the_service_loses_no_accepted_submission() {
    let dir = tempfile::tempdir().unwrap();
    let run;
    {
        let (registry, app) = setup(dir.path());
        run = create(&app, manual_config(), Some("launch")).await;
        pending(&app, &run, 4).await;
        let submit = json!({ "pending_id": "r0-p2-s1", "readings": [[0.5, 0.25], [4.0, 2.0]] });
        let (status, _) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(submit), Some("s1")).await;
        assert_eq!(status, StatusCode::OK);
        registry.shutdown();
        let handle = registry.get(&run).unwrap();
        while !handle.is_done() {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    let (registry, app) = setup(dir.path());
    let (_, state) = call(&app, "GET", &format!("/api/v1/runs/{run}"), None, None).await;
    assert_eq!(state["calls"], json!(1));
    let list = pending(&app, &run, 3).await;
    let ids: Vec<&str> = list.iter().map(|p| p["pending_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["r0-p1-s0", "r0-p1-s1", "r0-p2-s0"]);

    let replay = json!({ "pending_id": "r0-p2-s1", "readings": [[0.5, 0.25], [4.0, 2.0]] });
    let (status, ack) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(replay.clone()), Some("s1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["replayed"], json!(true));
    assert_eq!(ack["record_id"], json!(1));
    let (status, _) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(replay), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // the same client key still maps to the recovered run
    let (status, body) = call(&app, "POST", "/api/v1/runs", Some(json!({ "config": manual_config() })), Some("launch")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["run_id"], json!(run));
    registry.shutdown();
}

/// Parses a finished event stream into `(event, id, data)` triples.
fn parse_sse(text: &str) -> Vec<(String, Option<u64>, Value)> {
    text.split("\n\n")
        .filter(|block| block.lines().any(|l| l.starts_with("data:")))
        .map(|block| {
            let mut kind = String::new();
            let mut id = None;
            let mut data = Value::Null;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    kind = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = serde_json::from_str(v.trim()).unwrap();
                }
            }
            (kind, id, data)
        })
        .collect()
}

async fn read_events(app: &Router, run: &str, last: Option<u64>) -> Vec<(String, Option<u64>, Value)> {
    let mut req = Request::builder().uri(format!("/api/v1/runs/{run}/events"));
    if let Some(l) = last {
        req = req.header("last-event-id", l.to_string());
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let bytes = tokio::time::timeout(Duration::from_secs(60), resp.into_body().collect())
        .await
        .expect("stream ends with the run")
        .unwrap()
        .to_bytes();
    parse_sse(std::str::from_utf8(&bytes).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_is_gapless_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let (_registry, app) = setup(dir.path());
    let run = create(&app, synthetic_config(16), None).await;

    let events = read_events(&app, &run, None).await;
    assert_eq!(events[0].0, "status");
    let numbered: Vec<u64> = events.iter().filter_map(|e| e.1).collect();
    assert_eq!(numbered, (1..=numbered.len() as u64).collect::<Vec<_>>());
    let records: Vec<&Value> = events.iter().filter(|e| e.0 == "record").map(|e| &e.2).collect();
    assert_eq!(records.len(), 16);
    let calls: Vec<u64> = records.iter().map(|r| r["calls"].as_u64().unwrap()).collect();
    assert_eq!(calls, (1..=16).collect::<Vec<_>>());
    let rounds: Vec<u64> = events.iter().filter(|e| e.0 == "round").map(|e| e.2["round"].as_u64().unwrap()).collect();
    assert_eq!(rounds, vec![0, 1, 2, 3]);
    assert!(events.iter().any(|e| e.0 == "status" && e.2["status"] == "finished"));

    let resumed = read_events(&app, &run, Some(7)).await;
    let resumed_ids: Vec<u64> = resumed.iter().filter_map(|e| e.1).collect();
    assert_eq!(resumed_ids, (8..=*numbered.last().unwrap()).collect::<Vec<_>>());

    // after a restart the numbered events are rebuilt identically from the journal
    let (_registry, app) = setup(dir.path());
    let rebuilt = read_events(&app, &run, None).await;
    let strip = |v: &[(String, Option<u64>, Value)]| -> Vec<(String, Option<u64>, Value)> {
        v.iter().filter(|e| e.1.is_some()).cloned().collect()
    };
    assert_eq!(strip(&rebuilt), strip(&events));
}

#[tokio::test(flavor = "multi_thread")]
async fn synthetic_runs_finish_in_the_background() {
    let dir = tempfile::tempdir().unwrap();
    let (_registry, app) = setup(dir.path());
    let run = create(&app, synthetic_config(12), None).await;
    let state = until_status(&app, &run, "finished").await;
    assert_eq!(state["calls"], json!(12));
    assert_eq!(state["elites"].as_array().unwrap().len(), 2);
    let (_, pending) = call(&app, "GET", &format!("/api/v1/runs/{run}/pending"), None, None).await;
    assert_eq!(pending["pending"], json!([]));
    let submit = json!({ "pending_id": "r0-p1-s0", "readings": [[1.0, 1.0]] });
    let (status, _) = call(&app, "POST", &format!("/api/v1/runs/{run}/results"), Some(submit), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}
