#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use s4_core::corpus::{generate_synthetic, Dataset, SyntheticConfig};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

/// The tiny planted corpus used across CLI and service tests.
pub fn tiny_dataset(seed: u64) -> Dataset {
    let cfg: SyntheticConfig = serde_json::from_value(read_fixture("tiny_synthetic.json")).unwrap();
    generate_synthetic(&cfg, seed).unwrap()
}

/// Rule set accepting exactly the planted tokens of each class.
pub fn planted_oracle() -> Value {
    let list = |prefix: &str| (0..5).map(|i| json!({"token": format!("{prefix}{i}"), "score": 1.0})).collect::<Vec<_>>();
    json!({
        "k": 5,
        "penalty": 0.0,
        "rules": [
            {"label": "neg", "tokens": list("n")},
            {"label": "pos", "tokens": list("p")},
        ]
    })
}

pub fn session_config(budget: usize) -> Value {
    let mut cfg = read_fixture("tiny_session.json");
    cfg["budget"] = json!(budget);
    cfg
}

pub fn create_body(dataset: &Dataset, budget: usize, scripted: bool) -> Value {
    let mut body = json!({
        "config": session_config(budget),
        "seed_evidence": read_fixture("seed_evidence.json"),
        "schema": {"labels": ["neg", "pos"]},
        "records": dataset.to_records(),
    });
    if scripted {
        body["oracle"] = planted_oracle();
    }
    body
}

pub struct Schemas {
    doc: Value,
}

impl Schemas {
    pub fn load() -> Self {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/api.schema.json");
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        jsonschema::meta::validate(&doc).expect("schema document is valid JSON Schema");
        Schemas { doc }
    }

    pub fn check(&self, def: &str, instance: &Value) {
        assert!(self.doc["$defs"].get(def).is_some(), "no schema named {def}");
        let mut schema = self.doc.clone();
        schema["$ref"] = json!(format!("#/$defs/{def}"));
        let validator = jsonschema::validator_for(&schema).unwrap();
        let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
        assert!(errors.is_empty(), "{def} violations: {errors:#?}\ninstance: {instance:#}");
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

pub async fn call_raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

/// Polls the session until no step is running.
pub async fn wait_idle(app: &Router, id: &str) -> Value {
    for _ in 0..6000 {
        let (status, view) = call(app, Method::GET, &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if view["busy"] == json!(false) {
            return view;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} stayed busy");
}
