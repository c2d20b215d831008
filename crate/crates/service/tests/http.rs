use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use trialflow_service::http::router;
use trialflow_service::SessionStore;

struct App {
    _dir: tempfile::TempDir,
    router: Router,
}

impl App {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(SessionStore::open(dir.path()).unwrap());
        App { _dir: dir, router: router(store) }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, String) {
        let body = match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        };
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.call(method, uri, body).await;
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    async fn exports(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        for kind in ["model-json", "pfd-json", "dot", "pfd-dot", "transitions"] {
            out.push(self.call(Method::GET, &format!("/sessions/{id}/export?kind={kind}"), None).await.1);
        }
        out
    }
}

async fn created(app: &App) -> String {
    let (status, body) =
        app.json(Method::POST, "/sessions", Some(json!({"trial_name": "api trial", "exp_count": 40, "ctl_count": 40}))).await;
    assert_eq!(status, StatusCode::CREATED);
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn withdraw_priors_infer_round_trip() {
    let app = App::new();
    let id = created(&app).await;

    let (status, body) = app
        .json(
            Method::POST,
            &format!("/sessions/{id}/directives"),
            Some(json!({"kind": "Withdraw", "target": "assigned experimental", "yes_count": 4})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["prior_requests"].as_array().unwrap().len(), 1);
    assert_eq!(body["status"], "AwaitingPriors");

    let (status, body) = app.json(Method::POST, &format!("/sessions/{id}/infer"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "WrongStatus");

    let (_, pending) = app.json(Method::GET, &format!("/sessions/{id}/pending-priors"), None).await;
    let param = pending[0]["param"].clone();
    let (status, body) =
        app.json(Method::POST, &format!("/sessions/{id}/priors"), Some(json!({"param": param, "mean": 0.1, "ess": 20}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "Modeling");

    let priors = json!([
        {"param": "population mortality rate under experimental treatment", "a": 3, "b": 9},
        {"param": "population mortality rate under control treatment", "a": 3, "b": 9},
        {"param": "population mortality rate under baseline care", "a": 3, "b": 9},
    ]);
    let (status, _) = app.json(Method::POST, &format!("/sessions/{id}/priors"), Some(priors)).await;
    assert_eq!(status, StatusCode::OK);

    let (status, report) = app.json(Method::POST, &format!("/sessions/{id}/infer"), Some(json!({"seed": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["m"], 4);
    assert_eq!(report["converged"], true);

    let (status, view) = app.json(Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["log_len"], 3);
}

#[tokio::test]
async fn errors_map_to_status_codes_without_side_effects() {
    let app = App::new();
    let id = created(&app).await;
    let uri = format!("/sessions/{id}/directives");
    app.json(Method::POST, &uri, Some(json!({"kind": "LoseToFollowup", "target": "assigned control"}))).await;
    let before = app.exports(&id).await;

    let (status, body) = app
        .json(
            Method::POST,
            &uri,
            Some(json!({"kind": "AttachEvidence", "target": "patients lost to followup in assigned control", "successes": 1, "trials": 2})),
        )
        .await;
    // Pending priors block directives before the state machine is consulted.
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "WrongStatus");

    let (_, pending) = app.json(Method::GET, &format!("/sessions/{id}/pending-priors"), None).await;
    let all: Vec<Value> =
        pending.as_array().unwrap().iter().map(|r| json!({"param": r["param"], "a": 2, "b": 8})).collect();
    app.json(Method::POST, &format!("/sessions/{id}/priors"), Some(Value::Array(all))).await;
    let before = {
        assert_ne!(app.exports(&id).await, before);
        app.exports(&id).await
    };

    let (status, body) = app
        .json(
            Method::POST,
            &uri,
            Some(json!({"kind": "AttachEvidence", "target": "patients lost to followup in assigned control", "successes": 1, "trials": 2})),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "Denied");
    assert_eq!(body["reason"], trialflow_core::states::LOST_EVIDENCE_REASON);

    let (status, body) = app.json(Method::POST, &uri, Some(json!({"kind": "Withdraw", "target": "nobody"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NotFound");

    let (status, _) = app.json(Method::POST, &uri, Some(json!({"kind": "Teleport"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = app.call(Method::GET, &format!("/sessions/{id}/export?kind=pdf"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(app.exports(&id).await, before);

    let (status, _) = app.call(Method::GET, "/sessions/s404/export?kind=dot", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = app.call(Method::GET, "/sessions/..%2Fx/export?kind=dot", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn negative_arm_count_is_invalid() {
    let app = App::new();
    let (status, body) = app.json(Method::POST, "/sessions", Some(json!({"trial_name": "t", "exp_count": -3}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "Invalid");
}

#[tokio::test]
async fn transitions_gray_out_denied_actions() {
    let app = App::new();
    let id = created(&app).await;
    let (status, body) = app.json(Method::GET, &format!("/sessions/{id}/transitions"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["table"].as_array().unwrap().len(), 25);
    let root = &body["cohorts"][0];
    assert_eq!(root["state"], "Subdivided");
    assert!(root["actions"].as_array().unwrap().iter().all(|a| a["permitted"] == false));
    let arm = &body["cohorts"][1];
    assert_eq!(arm["state"], "Active");
    assert!(arm["actions"].as_array().unwrap().iter().all(|a| a["permitted"] == true));
}

#[tokio::test]
async fn export_round_trips_through_the_core_readers() {
    let app = App::new();
    let id = created(&app).await;
    let (status, model) = app.call(Method::GET, &format!("/sessions/{id}/export?kind=model-json"), None).await;
    assert_eq!(status, StatusCode::OK);
    let back = trialflow_core::diagram::InfluenceDiagram::from_json(&model).unwrap();
    assert_eq!(back.to_json(), model);
    let (_, flow) = app.call(Method::GET, &format!("/sessions/{id}/export?kind=pfd-json"), None).await;
    let back = trialflow_core::flow::PatientFlowDiagram::from_json(&flow).unwrap();
    assert_eq!(back.to_json(), flow);
}

#[tokio::test]
async fn api_walkthrough_matches_the_same_script() {
    let app = App::new();
    let id = created(&app).await;
    let steps = [
        ("directives", json!({"kind": "Withdraw", "target": "assigned experimental", "yes_count": 4})),
        ("priors", json!({"param": "withdrawal rate in assigned experimental", "a": 2, "b": 18})),
        ("directives", json!({"kind": "AttachEvidence", "target": "assigned control", "successes": 9, "trials": 40})),
    ];
    let mut script = String::from("{\"kind\":\"Session\",\"trial_name\":\"api trial\",\"exp_count\":40,\"ctl_count\":40}\n");
    for (path, body) in &steps {
        let (status, _) = app.json(Method::POST, &format!("/sessions/{id}/{path}"), Some(body.clone())).await;
        assert_eq!(status, StatusCode::OK);
        let mut line = body.clone();
        if *path == "priors" {
            line["kind"] = json!("SetPrior");
        }
        script.push_str(&line.to_string());
        script.push('\n');
    }
    let (_, via_api) = app.call(Method::GET, &format!("/sessions/{id}/export?kind=model-json"), None).await;
    let session = trialflow_service::Script::parse(&script).unwrap().execute().unwrap();
    let via_script = trialflow_service::export_session(&session, trialflow_service::ExportKind::ModelJson).unwrap();
    assert_eq!(via_api, via_script);
}
