use std::collections::HashSet;
use std::sync::Arc;

use trialflow_core::session::{SessionConfig, SessionStatus};
use trialflow_core::states::LOST_EVIDENCE_REASON;
use trialflow_service::{ApiError, DirectiveRequest, ErrorCode, ExportKind, PriorBody, Ref, SessionId, SessionStore};

fn config() -> SessionConfig {
    SessionConfig { exp_count: Some(60), ctl_count: Some(60), ..SessionConfig::new("store trial") }
}

fn name(s: &str) -> Ref {
    Ref::Name(s.to_string())
}

fn prior(param: &str, a: f64, b: f64) -> PriorBody {
    serde_json::from_value(serde_json::json!({ "param": param, "a": a, "b": b })).unwrap()
}

fn exports(store: &SessionStore, id: &SessionId) -> Vec<String> {
    ExportKind::ALL
        .into_iter()
        .filter(|k| *k != ExportKind::ReportJson)
        .map(|k| store.export(id, k).unwrap())
        .collect()
}

fn lost_session(store: &SessionStore) -> SessionId {
    let id = store.create(config()).unwrap();
    store
        .post_directive(&id, &DirectiveRequest::LoseToFollowup { target: name("assigned control"), yes_count: Some(6) })
        .unwrap();
    store
        .set_priors(
            &id,
            &[
                prior("loss-to-followup rate in assigned control", 2.0, 18.0),
                prior("study mortality rate for patients lost to followup in assigned control", 3.0, 7.0),
            ],
        )
        .unwrap();
    id
}

#[test]
fn fresh_session_has_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.create(config()).unwrap();
    let view = store.view(&id).unwrap();
    assert_eq!(view.status, SessionStatus::Modeling);
    let nodes = &view.model.nodes;
    assert_eq!(nodes.iter().filter(|n| n.is_parameter()).count(), 9);
    assert_eq!(nodes.iter().filter(|n| n.kind.is_chance()).count(), 3);

    let dot = store.export(&id, ExportKind::Dot).unwrap();
    assert_eq!(dot.matches("subgraph cluster_").count(), 4);
}

#[test]
fn withdraw_requests_one_prior() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.create(config()).unwrap();
    let requests = store
        .post_directive(&id, &DirectiveRequest::Withdraw { target: name("assigned experimental"), yes_count: None })
        .unwrap();
    assert_eq!(requests.len(), 1);
    assert_eq!(store.pending_priors(&id).unwrap(), requests);
    let err = store.infer(&id, 0).unwrap_err();
    assert_eq!(err.code, ErrorCode::WrongStatus);
}

#[test]
fn error_paths_leave_exports_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = lost_session(&store);
    let before = exports(&store, &id);
    let log_before = std::fs::read(store.session_dir(&id).join("log.jsonl")).unwrap();

    let lost = name("patients lost to followup in assigned control");
    let err = store
        .post_directive(&id, &DirectiveRequest::AttachEvidence { target: lost.clone(), successes: 1, trials: 6 })
        .unwrap_err();
    assert_eq!(err, ApiError::denied(LOST_EVIDENCE_REASON));

    let err = store
        .post_directive(&id, &DirectiveRequest::Withdraw { target: name("nobody"), yes_count: None })
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::NotFound);

    let err = store
        .post_directive(
            &id,
            &DirectiveRequest::AttachEvidence { target: name("assigned experimental"), successes: 9, trials: 3 },
        )
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::Invalid);

    let err = store.set_priors(&id, &[prior("withdrawal rate in nothing", 2.0, 2.0)]).unwrap_err();
    assert_eq!(err.code, ErrorCode::NotFound);
    let err = store.set_priors(&id, &[prior("loss-to-followup rate in assigned control", -1.0, 2.0)]).unwrap_err();
    assert_eq!(err.code, ErrorCode::Invalid);

    assert_eq!(exports(&store, &id), before);
    assert_eq!(std::fs::read(store.session_dir(&id).join("log.jsonl")).unwrap(), log_before);
    store.evict(&id);
    assert_eq!(exports(&store, &id), before);
}

#[test]
fn finished_session_rejects_further_work() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.create(config()).unwrap();
    store.post_directive(&id, &DirectiveRequest::Finish).unwrap();
    let before = exports(&store, &id);
    let err = store
        .post_directive(&id, &DirectiveRequest::Withdraw { target: name("assigned control"), yes_count: None })
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::WrongStatus);
    assert_eq!(exports(&store, &id), before);
}

#[test]
fn replay_without_snapshot_reproduces_exports() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = lost_session(&store);
    store
        .post_directive(
            &id,
            &DirectiveRequest::AttachEvidence {
                target: name("patients followed in assigned control"),
                successes: 12,
                trials: 54,
            },
        )
        .unwrap();
    store.post_directive(&id, &DirectiveRequest::ApplyMeasurementError { target: name("assigned experimental") }).unwrap();
    let before = exports(&store, &id);
    let snapshot = std::fs::read(store.session_dir(&id).join("snapshot.json")).unwrap();

    std::fs::remove_file(store.session_dir(&id).join("snapshot.json")).unwrap();
    let fresh = SessionStore::open(dir.path()).unwrap();
    assert_eq!(exports(&fresh, &id), before);

    // Any mutation rewrites the snapshot cache from the replayed state.
    fresh.set_priors(&id, &[prior("sensitivity of mortality measurement in assigned experimental", 40.0, 4.0)]).unwrap();
    let s = fresh.with_session(&id, |s| s.clone()).unwrap();
    let replayed = fresh.load_from_disk(&id).unwrap();
    assert_eq!(s, replayed);
    assert_ne!(std::fs::read(fresh.session_dir(&id).join("snapshot.json")).unwrap(), snapshot);
}

#[test]
fn repeated_inference_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = store.create(config()).unwrap();
    store
        .set_priors(
            &id,
            &[
                prior("population mortality rate under experimental treatment", 3.0, 9.0),
                prior("population mortality rate under control treatment", 3.0, 9.0),
                prior("population mortality rate under baseline care", 3.0, 9.0),
            ],
        )
        .unwrap();
    let a = store.infer(&id, 0).unwrap().to_json();
    let b = store.infer(&id, 0).unwrap().to_json();
    assert_eq!(a, b);
    assert_eq!(store.export(&id, ExportKind::ReportJson).unwrap(), a);
}

#[test]
fn concurrent_creates_get_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::open(dir.path()).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let store = store.clone();
            std::thread::spawn(move || (0..4).map(|_| store.create(config()).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    let ids: HashSet<SessionId> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(ids.len(), 32);

    let reopened = SessionStore::open(dir.path()).unwrap();
    let next = reopened.create(config()).unwrap();
    assert!(!ids.contains(&next));
}

#[test]
fn ids_outside_the_store_are_not_found() {
    for bad in ["../etc", "s1/..", "x1", "s", ""] {
        assert_eq!(SessionId::parse(bad).unwrap_err().code, ErrorCode::NotFound, "{bad:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let id = SessionId::parse("s99").unwrap();
    assert_eq!(store.export(&id, ExportKind::Dot).unwrap_err().code, ErrorCode::NotFound);
}
