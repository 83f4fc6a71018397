mod common;

use axum::http::{Method, StatusCode};
use axum::Router;
use serde_json::{json, Value};

use common::{call, call_raw, create_body, tiny_dataset, wait_idle, Schemas};
use s4_cli::service::{router, AppState};

fn app(root: &std::path::Path) -> Router {
    router(AppState::load(root).unwrap())
}

async fn create(app: &Router, body: Value, schemas: &Schemas) -> String {
    schemas.check("CreateSessionRequest", &body);
    let (status, resp) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{resp}");
    schemas.check("CreateSessionResponse", &resp);
    resp["id"].as_str().unwrap().to_string()
}

/// Steps once and waits for the step to finish.
async fn step(app: &Router, id: &str, schemas: &Schemas) -> Value {
    let (status, view) = call(app, Method::POST, &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{view}");
    schemas.check("SessionView", &view);
    assert_eq!(view["busy"], json!(true));
    let view = wait_idle(app, id).await;
    schemas.check("SessionView", &view);
    assert_eq!(view["error"], Value::Null);
    view
}

/// Everything a client can read about a session.
async fn snapshot(app: &Router, id: &str) -> Vec<Value> {
    let mut out = Vec::new();
    for path in ["", "/query", "/factors", "/metrics", "/events"] {
        let (status, v) = call(app, Method::GET, &format!("/sessions/{id}{path}"), None).await;
        assert_eq!(status, StatusCode::OK);
        out.push(v);
    }
    out
}

#[tokio::test]
async fn create_returns_201_and_running_state() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let schemas = Schemas::load();
    let id = create(&app, create_body(&tiny_dataset(1), 0, false), &schemas).await;
    let (status, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("SessionView", &view);
    assert_eq!(view["status"], "running");
    assert_eq!(view["evidence_size"], 2);
    let (status, list) = call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("SessionList", &list);
    assert_eq!(list["sessions"], json!([id]));
    let (status, body) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    schemas.check("Error", &body);
}

#[tokio::test]
async fn create_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let schemas = Schemas::load();
    let ds = tiny_dataset(1);

    let mut body = create_body(&ds, 0, false);
    body["config"]["outer_iterations"] = json!(0);
    let (status, err) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    schemas.check("Error", &err);

    let mut body = create_body(&ds, 0, false);
    body["dataset_path"] = json!("/nonexistent.jsonl");
    let (status, _) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut body = create_body(&ds, 0, false);
    body["seed_evidence"] = json!([{"kind": "token_unary", "token": "p0", "label": "maybe"}]);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert!(status.is_client_error(), "{status}");
}

#[tokio::test]
async fn interactive_query_answer_contract() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let schemas = Schemas::load();
    let id = create(&app, create_body(&tiny_dataset(1), 2, false), &schemas).await;

    let (status, q) = call(&app, Method::GET, &format!("/sessions/{id}/query"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("QueryResponse", &q);
    assert_eq!(q["query"], Value::Null);

    let view = step(&app, &id, &schemas).await;
    assert_eq!(view["status"], "awaiting_answer");
    let qid = view["pending_query_id"].as_u64().unwrap();

    let (status, q) = call(&app, Method::GET, &format!("/sessions/{id}/query"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("QueryResponse", &q);
    let query = &q["query"];
    assert_eq!(query["id"].as_u64(), Some(qid));
    assert_eq!(query["candidates"].as_array().unwrap().len(), 2);
    let support = query["support"].as_array().unwrap();
    assert!(!support.is_empty());
    assert!(support.iter().all(|s| !s["highlight"].as_array().unwrap().is_empty()));

    // Stepping while a query is pending conflicts.
    let (status, err) = call(&app, Method::POST, &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    schemas.check("Error", &err);

    let answer = |qid: u64, body: Value| {
        let app = app.clone();
        let id = id.clone();
        async move { call(&app, Method::POST, &format!("/sessions/{id}/query/{qid}/answer"), Some(body)).await }
    };
    let (status, _) = answer(qid, json!({"accept": "maybe"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = answer(qid + 7, json!({"reject": true})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call_raw(&app, Method::POST, &format!("/sessions/{id}/query/{qid}/answer"), Some(json!({"reject": false}))).await;
    assert!(status.is_client_error());

    let before = snapshot(&app, &id).await;
    let body = json!({"accept": "pos"});
    schemas.check("AnswerRequest", &body);
    let (status, resp) = answer(qid, body).await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    schemas.check("AnswerResponse", &resp);
    assert_eq!(resp["answered"], 1);
    assert_eq!(resp["outcome"], json!({"state": "accepted", "label": "pos"}));

    let (status, factors) = call(&app, Method::GET, &format!("/sessions/{id}/factors"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("FactorsResponse", &factors);
    let factors = factors["factors"].as_array().unwrap();
    let before_factors = before[2]["factors"].as_array().unwrap();
    assert_eq!(factors.len(), before_factors.len() + 1);
    let added = factors.last().unwrap();
    assert_eq!(added["origin"], "fal");
    assert_eq!(added["label"], "pos");
    assert_eq!(added["token"], query["token"]);

    // A second answer to the same query conflicts and changes nothing.
    let after_first = snapshot(&app, &id).await;
    let (status, err) = answer(qid, json!({"reject": true})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    schemas.check("Error", &err);
    assert_eq!(snapshot(&app, &id).await, after_first);

    let (status, metrics) = call(&app, Method::GET, &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("MetricsResponse", &metrics);
    let rows = metrics["metrics"].as_array().unwrap().len();
    assert!(rows >= 1);
    let (status, csv) = call_raw(&app, Method::GET, &format!("/sessions/{id}/metrics?format=csv"), None).await;
    assert_eq!(status, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("outer,sst_step,test_accuracy,q_entropy,evidence_size,answered,lr"));
    assert_eq!(lines.count(), rows);

    let (status, events) = call(&app, Method::GET, &format!("/sessions/{id}/events"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("EventsResponse", &events);
}

#[tokio::test]
async fn scripted_session_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let schemas = Schemas::load();
    let id = create(&app, create_body(&tiny_dataset(2), 2, true), &schemas).await;
    let view = step(&app, &id, &schemas).await;
    assert_eq!(view["status"], "done");
    assert_eq!(view["answered"], 2);
    assert!(view["latest_metrics"].is_object());
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // Every accepted factor names a planted token of the accepted label.
    let (_, factors) = call(&app, Method::GET, &format!("/sessions/{id}/factors"), None).await;
    schemas.check("FactorsResponse", &factors);
    for f in factors["factors"].as_array().unwrap().iter().filter(|f| f["origin"] == "fal") {
        let token = f["token"].as_str().unwrap();
        let prefix = if f["label"] == "pos" { "p" } else { "n" };
        assert!(token.starts_with(prefix), "{f}");
    }
}

#[tokio::test]
async fn second_step_while_busy_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let schemas = Schemas::load();
    let mut body = create_body(&tiny_dataset(3), 3, true);
    body["config"]["outer_iterations"] = json!(6);
    body["config"]["dpl"]["em_iterations"] = json!(4);
    body["config"]["dpl"]["epochs_per_m_step"] = json!(10);
    let id = create(&app, body, &schemas).await;
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, err) = call(&app, Method::POST, &format!("/sessions/{id}/step"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    schemas.check("Error", &err);
    // Reads are served from the committed snapshot while the step runs.
    let (status, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    schemas.check("SessionView", &view);
    let view = wait_idle(&app, &id).await;
    assert_eq!(view["status"], "done");
}

#[tokio::test]
async fn restart_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let schemas = Schemas::load();
    let (interactive, scripted, live) = {
        let app = app(dir.path());
        let a = create(&app, create_body(&tiny_dataset(4), 2, false), &schemas).await;
        let b = create(&app, create_body(&tiny_dataset(5), 2, true), &schemas).await;
        step(&app, &a, &schemas).await;
        let (_, q) = call(&app, Method::GET, &format!("/sessions/{a}/query"), None).await;
        let qid = q["query"]["id"].as_u64().unwrap();
        let (status, _) = call(&app, Method::POST, &format!("/sessions/{a}/query/{qid}/answer"), Some(json!({"reject": true}))).await;
        assert_eq!(status, StatusCode::OK);
        step(&app, &a, &schemas).await;
        step(&app, &b, &schemas).await;
        let live = vec![snapshot(&app, &a).await, snapshot(&app, &b).await];
        (a, b, live)
    };
    let restarted = app(dir.path());
    let replayed = vec![snapshot(&restarted, &interactive).await, snapshot(&restarted, &scripted).await];
    assert_eq!(replayed, live);

    // The restored session keeps going from where it was.
    let (_, view) = call(&restarted, Method::GET, &format!("/sessions/{interactive}"), None).await;
    assert_eq!(view["status"], "awaiting_answer");
    let qid = view["pending_query_id"].as_u64().unwrap();
    let uri = format!("/sessions/{interactive}/query/{qid}/answer");
    let (status, _) = call(&restarted, Method::POST, &uri, Some(json!({"accept": "neg"}))).await;
    assert_eq!(status, StatusCode::OK);
    let view = step(&restarted, &interactive, &schemas).await;
    assert_eq!(view["status"], "done");
    assert_eq!(view["answered"], 2);
}

#[tokio::test]
async fn corrupt_session_is_refused_others_load() {
    let dir = tempfile::tempdir().unwrap();
    let schemas = Schemas::load();
    let (good, bad) = {
        let app = app(dir.path());
        let good = create(&app, create_body(&tiny_dataset(6), 1, true), &schemas).await;
        let bad = create(&app, create_body(&tiny_dataset(7), 1, true), &schemas).await;
        step(&app, &good, &schemas).await;
        step(&app, &bad, &schemas).await;
        (good, bad)
    };
    // Tamper with a recorded metric so replay diverges.
    let log = dir.path().join(&bad).join("events.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<String> = text
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if v["event"] == "metrics" {
                v["evidence_size"] = json!(999);
            }
            v.to_string()
        })
        .collect();
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    std::fs::create_dir(dir.path().join("junk")).unwrap();

    let app = app(dir.path());
    let (status, view) = call(&app, Method::GET, &format!("/sessions/{good}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["status"], "done");
    let (status, err) = call(&app, Method::GET, &format!("/sessions/{bad}"), None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    schemas.check("Error", &err);
    let (_, list) = call(&app, Method::GET, "/sessions", None).await;
    schemas.check("SessionList", &list);
    assert_eq!(list["sessions"], json!([good]));
    assert!(list["unavailable"].as_array().unwrap().contains(&json!(bad)));

    // New sessions still get fresh ids.
    let fresh = create(&app, create_body(&tiny_dataset(8), 0, false), &schemas).await;
    assert!(fresh != good && fresh != bad);
}
