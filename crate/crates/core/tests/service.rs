use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use smaad::casebase::CaseBase;
use smaad::domain::DomainPack;
use smaad::service::{router, AppState, ServiceConfig};

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut request = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(body) => {
            request = request.header("content-type", "application/json");
            Body::from(body.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(request.body(body).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn raw(app: &Router, uri: &str, last_event_id: Option<u64>) -> (StatusCode, String) {
    let mut request = Request::builder().uri(uri);
    if let Some(id) = last_event_id {
        request = request.header("last-event-id", id.to_string());
    }
    let response = app.clone().oneshot(request.body(Body::empty()).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[derive(Debug, PartialEq)]
struct SseEvent {
    id: u64,
    event: String,
    data: Value,
}

fn parse_sse(text: &str) -> Vec<SseEvent> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut id = None;
            let mut event = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id: ") {
                    id = v.parse().ok();
                } else if let Some(v) = line.strip_prefix("event: ") {
                    event = Some(v.to_string());
                } else if let Some(v) = line.strip_prefix("data: ") {
                    data = serde_json::from_str(v).ok();
                }
            }
            Some(SseEvent {
                id: id?,
                event: event?,
                data: data?,
            })
        })
        .collect()
}

fn viral() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("SO1", "present"),
        ("SE1", "present"),
        ("SE2", "absent"),
        ("SE3", "absent"),
        ("SE4", "absent"),
        ("SE5", "absent"),
        ("SE6", "absent"),
        ("AC", "absent"),
        ("SG", "absent"),
    ])
}

fn app() -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::builtin());
    (state.clone(), router(state))
}

async fn create(app: &Router, findings: Value) -> (StatusCode, Value) {
    call(
        app,
        Method::POST,
        "/sessions",
        Some(json!({ "pack": "acute-diarrhea", "findings": findings })),
    )
    .await
}

/// Answers the oldest question, or validates the oldest proposal, until the
/// session closes. Returns the number of commands sent.
async fn play(app: &Router, id: &str, answers: &BTreeMap<&str, &str>, limit: usize) -> usize {
    let mut commands = 0;
    while commands < limit {
        let (_, snap) = call(app, Method::GET, &format!("/sessions/{id}"), None).await;
        if snap["status"] == "Completed" || snap["status"] == "Failed" {
            break;
        }
        if let Some(sign) = snap["pending_questions"][0].as_str() {
            let (status, _) = call(
                app,
                Method::POST,
                &format!("/sessions/{id}/answers"),
                Some(json!({ "sign": sign, "value": answers[sign] })),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
        } else if let Some(proposal) = snap["pending_proposals"][0]["proposal_id"].as_str() {
            let (status, _) = call(
                app,
                Method::POST,
                &format!("/sessions/{id}/validate"),
                Some(json!({ "proposal_id": proposal })),
            )
            .await;
            assert_eq!(status, StatusCode::OK);
        } else {
            panic!("session {id} is waiting on nothing: {snap}");
        }
        commands += 1;
    }
    commands
}

#[tokio::test]
async fn empty_session_asks_so1_first() {
    let (_, app) = app();
    let (status, body) = create(&app, json!({})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["session"], "session-000001");
    assert_eq!(body["status"], "AwaitingUser");
    let first = body["events"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["performative"] == "QueryUser")
        .unwrap();
    assert_eq!(first["content"]["sign"], "SO1");
}

#[tokio::test]
async fn so1_absent_fails_the_session() {
    let (_, app) = app();
    let (status, body) = create(&app, json!({ "SO1": "absent" })).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["status"], "Failed");
    let (_, snap) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    assert_eq!(snap["failure"]["failure"], "stuck");
    assert_eq!(snap["failure"]["state"], "Start");
}

#[tokio::test]
async fn unknown_pack_is_404() {
    let (_, app) = app();
    let (status, body) = call(&app, Method::POST, "/sessions", Some(json!({ "pack": "cardiology" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_domain_pack");
    assert_eq!(body["detail"]["pack"], "cardiology");
    let (status, body) = call(&app, Method::GET, "/sessions/session-000404", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_session");
}

#[tokio::test]
async fn malformed_value_leaves_memory_untouched() {
    let (_, app) = app();
    create(&app, json!({})).await;
    let (_, before) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    for value in [json!("maybe"), json!(7), json!("positive:")] {
        let (status, body) = call(
            &app,
            Method::POST,
            "/sessions/session-000001/answers",
            Some(json!({ "sign": "SO1", "value": value })),
        )
        .await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{value}");
        assert_eq!(body["code"], "invalid_value");
    }
    let (status, body) = call(
        &app,
        Method::POST,
        "/sessions/session-000001/answers",
        Some(json!({ "sign": "SE99", "value": "present" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "unknown_sign");
    let (status, body) = call(
        &app,
        Method::POST,
        "/sessions/session-000001/answers",
        Some(json!({ "sign": "SO1", "value": "positive:shigella" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_value");
    let (_, after) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    assert_eq!(before, after);
    assert_eq!(after["memory_version"], 1);
}

#[tokio::test]
async fn full_flow_completes_and_closed_session_refuses_commands() {
    let (state, app) = app();
    create(&app, json!({ "SO1": "present" })).await;
    play(&app, "session-000001", &viral(), 50).await;
    let (_, snap) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    assert_eq!(snap["status"], "Completed");
    assert_eq!(snap["case_id"], "case-000001");
    assert_eq!(
        snap["stage_results"],
        json!({ "Diagnosis": "Δ1", "Prognosis": "Π1", "Therapy": "Θ1", "FollowUp": "SΘ" })
    );
    assert_eq!(snap["next_seq"], 62);
    assert_eq!(state.cases().read().unwrap().len(), 1);

    let (status, body) = call(
        &app,
        Method::POST,
        "/sessions/session-000001/answers",
        Some(json!({ "sign": "SE1", "value": "absent" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "session_completed");

    let (_, list) = call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(
        list,
        json!([{ "id": "session-000001", "pack": "acute-diarrhea", "status": "Completed" }])
    );
}

#[tokio::test]
async fn validating_a_stale_proposal_is_a_conflict() {
    let (_, app) = app();
    let answers = viral();
    create(&app, json!({ "SO1": "present" })).await;
    play(&app, "session-000001", &answers, 50).await;
    create(&app, json!(answers)).await;
    let (_, snap) = call(&app, Method::GET, "/sessions/session-000002", None).await;
    let pending: Vec<String> = snap["pending_proposals"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["proposal_id"].as_str().unwrap().to_string())
        .collect();
    assert!(pending.len() >= 2, "{snap}");
    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions/session-000002/validate",
        Some(json!({ "proposal_id": pending[0] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    for stale in [pending[0].as_str(), pending[1].as_str(), "proposal-999999"] {
        let (status, body) = call(
            &app,
            Method::POST,
            "/sessions/session-000002/validate",
            Some(json!({ "proposal_id": stale })),
        )
        .await;
        assert_eq!(status, StatusCode::CONFLICT, "{stale}");
        assert_eq!(body["code"], "unknown_proposal");
    }
}

#[tokio::test]
async fn rejecting_keeps_the_session_open() {
    let (_, app) = app();
    create(&app, json!(viral())).await;
    let (_, snap) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    let first = snap["pending_proposals"][0]["proposal_id"]
        .as_str()
        .unwrap()
        .to_string();
    let (status, body) = call(
        &app,
        Method::POST,
        "/sessions/session-000001/reject",
        Some(json!({ "proposal_id": first, "note": "not convinced" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(body["status"], "Completed");
    assert_eq!(body["events"][0]["performative"], "Reject");
    assert_eq!(body["events"][0]["content"]["note"], "not convinced");
}

#[tokio::test]
async fn event_stream_replays_and_resumes_without_gaps() {
    let (_, app) = app();
    create(&app, json!({ "SO1": "present" })).await;
    play(&app, "session-000001", &viral(), 50).await;

    let (status, text) = raw(&app, "/sessions/session-000001/events", None).await;
    assert_eq!(status, StatusCode::OK);
    let all = parse_sse(&text);
    assert_eq!(all.len(), 62);
    assert!(all
        .iter()
        .enumerate()
        .all(|(i, e)| e.id == i as u64 && e.data["seq"] == i as u64));
    assert!(all.iter().all(|e| e.data["performative"] == e.event.as_str()));
    assert_eq!(all.last().unwrap().data["content"]["info"]["info"], "completed");

    let (_, text) = raw(&app, "/sessions/session-000001/events?from=40", None).await;
    let tail = parse_sse(&text);
    assert_eq!(tail.first().unwrap().id, 40);
    assert_eq!(tail, all.into_iter().skip(40).collect::<Vec<_>>());

    let (_, text) = raw(&app, "/sessions/session-000001/events", Some(59)).await;
    let ids: Vec<u64> = parse_sse(&text).iter().map(|e| e.id).collect();
    assert_eq!(ids, [60, 61]);

    let (status, body) = call(&app, Method::GET, "/sessions/session-000001/events?from=x", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn live_subscriber_sees_every_entry_in_order() {
    let (_, app) = app();
    create(&app, json!({ "SO1": "present" })).await;
    let subscriber = {
        let app = app.clone();
        tokio::spawn(async move { raw(&app, "/sessions/session-000001/events?from=3", None).await })
    };
    tokio::task::yield_now().await;
    play(&app, "session-000001", &viral(), 50).await;
    let (status, text) = tokio::time::timeout(std::time::Duration::from_secs(10), subscriber)
        .await
        .expect("stream closes after completion")
        .unwrap();
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<u64> = parse_sse(&text).iter().map(|e| e.id).collect();
    assert_eq!(ids, (3..62).collect::<Vec<_>>());
}

#[tokio::test]
async fn restart_replays_journaled_sessions() {
    let data = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: Some(data.path().to_path_buf()),
        wall_clock: false,
    };
    let new_state =
        || Arc::new(AppState::new(vec![DomainPack::builtin()], CaseBase::in_memory().shared(), &config).unwrap());
    let answers = viral();

    let app = router(new_state());
    create(&app, json!({ "SO1": "present" })).await;
    play(&app, "session-000001", &answers, 3).await;
    create(&app, json!({ "SO1": "absent" })).await;
    let (_, before) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    let (_, before_events) = raw(&app, "/sessions/session-000002/events", None).await;
    assert_eq!(before["status"], "AwaitingUser");
    drop(app);

    let app = router(new_state());
    let (_, after) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    assert_eq!(before, after);
    let (_, after_events) = raw(&app, "/sessions/session-000002/events", None).await;
    assert_eq!(before_events, after_events);

    let (status, body) = create(&app, json!({})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["session"], "session-000003");

    play(&app, "session-000001", &answers, 50).await;
    let (_, done) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    assert_eq!(done["status"], "Completed");
    assert_eq!(done["next_seq"], 62);

    let journal = std::fs::read_to_string(data.path().join("sessions/session-000001.jsonl")).unwrap();
    assert_eq!(journal.lines().count(), 62);
}

#[tokio::test]
async fn cases_endpoint_ranks_retained_cases() {
    let (_, app) = app();
    let answers = viral();
    create(&app, json!({ "SO1": "present" })).await;
    play(&app, "session-000001", &answers, 50).await;

    let (_, snap) = call(&app, Method::GET, "/sessions/session-000001", None).await;
    let query = snap["findings"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(s, v)| format!("{s}={}", v.as_str().unwrap()))
        .collect::<Vec<_>>()
        .join(",");
    let (status, ranked) = call(&app, Method::GET, &format!("/cases?query={query}&k=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ranked.as_array().unwrap().len(), 1);
    assert_eq!(ranked[0]["case_id"], "case-000001");
    assert_eq!(ranked[0]["score"], 1.0);
    assert_eq!(ranked[0]["result"], "Δ1 Π1 Θ1 SΘ");

    let (_, by_session) = call(&app, Method::GET, "/cases?session=session-000001", None).await;
    assert_eq!(by_session[0]["score"], 1.0);

    let (status, body) = call(&app, Method::GET, "/cases?query=SO1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");
    let (status, _) = call(&app, Method::GET, "/cases?k=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn ontology_concept_lists_ancestors_and_relations() {
    let (_, app) = app();
    let (status, body) = call(
        &app,
        Method::GET,
        "/ontology/acute-diarrhea/concepts/bacterial_disease",
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["concept"]["id"], "bacterial_disease");
    assert_eq!(body["ancestors"], json!(["infectious_disease", "disease"]));
    assert!(body["relations"]
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["kind"] == "is_a" && r["target"] == "infectious_disease"));

    let (_, body) = call(&app, Method::GET, "/ontology/acute-diarrhea/concepts/SE1", None).await;
    assert_eq!(body["concept"]["attributes"]["sign_category"], "SE");
    assert_eq!(body["ancestors"], json!([]));

    let (status, body) = call(&app, Method::GET, "/ontology/acute-diarrhea/concepts/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_concept");
    let (status, body) = call(&app, Method::GET, "/ontology/none/concepts/SE1", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_domain_pack");
}
