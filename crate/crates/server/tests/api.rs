use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use gdm_core::engine::{Engine, EngineConfig};
use gdm_core::time::SteppedClock;
use gdm_core::{Timestamp, UserId};
use gdm_server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    let engine = Engine::in_memory(
        Arc::new(SteppedClock::new(Timestamp::from_millis(1_700_000_000_000), 1_000)),
        EngineConfig {
            snapshot_every: None,
            ..EngineConfig::default()
        },
    );
    let tokens = ["mod", "ann", "bob", "cy"].map(|u| (format!("t-{u}"), UserId::from(u)));
    router(AppState::new(Arc::new(engine), tokens))
}

fn request(method: Method, uri: &str, user: Option<&str>, body: Option<Value>) -> Request<Body> {
    let mut b = Request::builder().method(method).uri(uri);
    if let Some(u) = user {
        b = b.header(header::AUTHORIZATION, format!("Bearer t-{u}"));
    }
    match body {
        Some(v) => b
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => b.body(Body::empty()).unwrap(),
    }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, String) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call(app: &Router, method: Method, uri: &str, user: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = send(app, request(method, uri, Some(user), body)).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

async fn create(app: &Router) -> String {
    let members = json!({
        "intent": "map the viewpoints",
        "involvedUsers": [
            {"userId": "mod", "displayName": "Moderator", "isModerator": true, "expertiseLevel": 1},
            {"userId": "ann", "displayName": "Ann", "expertiseLevel": 1},
            {"userId": "bob", "displayName": "Bob", "expertiseLevel": 1},
            {"userId": "cy", "displayName": "Cy", "expertiseLevel": 1}
        ]
    });
    let (status, body) = call(app, Method::POST, "/collaborations", "mod", Some(members)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["collaborationId"].as_str().unwrap().to_string()
}

/// Brings a fresh collaboration to an open round with one proposal.
async fn open_round(app: &Router) -> (String, String) {
    let id = create(app).await;
    let steps = [
        ("situation", json!({"intent": "map the viewpoints"})),
        ("policy", json!({"policy": "MajorityDeciding"})),
        ("notify", json!({})),
    ];
    for (path, body) in steps {
        let (status, res) = call(app, Method::POST, &format!("/collaborations/{id}/{path}"), "mod", Some(body)).await;
        assert_eq!(status, StatusCode::OK, "{path}: {res}");
    }
    let (status, res) = call(
        app,
        Method::POST,
        &format!("/collaborations/{id}/proposals"),
        "ann",
        Some(json!({"body": "Similarity[BP:DataObject <-> SD:Entity]"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{res}");
    let p = res["created"].as_str().unwrap().to_string();
    let (status, _) = call(app, Method::POST, &format!("/collaborations/{id}/rounds/open"), "mod", None).await;
    assert_eq!(status, StatusCode::OK);
    (id, p)
}

#[tokio::test]
async fn full_round_over_http() {
    let app = app();
    let (id, p) = open_round(&app).await;
    for user in ["ann", "bob", "cy"] {
        let (status, res) = call(
            &app,
            Method::POST,
            &format!("/proposals/{p}/decisions"),
            user,
            Some(json!({"kind": "approval"})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED, "{res}");
    }
    let (status, res) = call(&app, Method::POST, &format!("/collaborations/{id}/rounds/close"), "mod", None).await;
    assert_eq!(status, StatusCode::OK, "{res}");
    assert_eq!(res["state"], "Closed");

    let (status, csv) = send(&app, request(Method::GET, &format!("/collaborations/{id}/summary?format=csv"), Some("bob"), None)).await;
    assert_eq!(status, StatusCode::OK);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("proposal,type,author"));
    assert!(lines.next().unwrap().ends_with("approved"), "{csv}");

    let (status, inbox) = call(&app, Method::GET, "/mailbox", "cy", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(!inbox.as_array().unwrap().is_empty());
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (id, p) = open_round(&app).await;

    let (status, _) = send(&app, request(Method::GET, "/collaborations", None, None)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let mut bad = request(Method::GET, "/collaborations", None, None);
    bad.headers_mut().insert(header::AUTHORIZATION, "Bearer nope".parse().unwrap());
    assert_eq!(send(&app, bad).await.0, StatusCode::UNAUTHORIZED);

    let (status, res) = call(&app, Method::POST, &format!("/proposals/{p}/decisions"), "bob", Some(json!({"kind": "reject"}))).await;
    assert_eq!((status, res["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("MissingComment")));

    let (status, res) = call(&app, Method::POST, &format!("/collaborations/{id}/rounds/close"), "ann", None).await;
    assert_eq!((status, res["code"].as_str()), (StatusCode::FORBIDDEN, Some("NotModerator")));

    let (status, res) = call(&app, Method::POST, &format!("/collaborations/{id}/notify"), "mod", None).await;
    assert_eq!((status, res["code"].as_str()), (StatusCode::CONFLICT, Some("WrongState")));

    let (status, _) = call(&app, Method::GET, "/collaborations/nothing-here", "mod", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/no/such/route", "mod", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/policies/Nope", "mod", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idempotency_key_replays_the_first_response() {
    let app = app();
    let (id, p) = open_round(&app).await;
    let post = || {
        let mut r = request(
            Method::POST,
            &format!("/proposals/{p}/alternatives"),
            Some("bob"),
            Some(json!({"body": "Induction[BP:DataObject -> SD:Entity]"})),
        );
        r.headers_mut().insert("idempotency-key", "k-1".parse().unwrap());
        r
    };
    let first = send(&app, post()).await;
    let second = send(&app, post()).await;
    assert_eq!(first.0, StatusCode::CREATED, "{}", first.1);
    assert_eq!(first, second);
    let (_, c) = call(&app, Method::GET, &format!("/collaborations/{id}"), "bob", None).await;
    assert_eq!(c["proposals"].as_array().map(Vec::len).or_else(|| c["proposals"].as_object().map(|m| m.len())), Some(2));
}

#[tokio::test]
async fn policies_are_listed() {
    let app = app();
    let (status, list) = call(&app, Method::GET, "/policies", "ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 5);
    let (status, p) = call(&app, Method::GET, "/policies/MajorityDeciding", "ann", None).await;
    assert_eq!(status, StatusCode::OK, "{p}");
}

fn sse_ids(text: &str) -> Vec<u64> {
    text.lines().filter_map(|l| l.strip_prefix("id: ")).map(|s| s.parse().unwrap()).collect()
}

#[tokio::test]
async fn event_stream_backlog_and_resume() {
    let app = app();
    let (id, _) = open_round(&app).await;
    let uri = format!("/collaborations/{id}/events?follow=false&access_token=t-ann");
    let (status, text) = send(&app, request(Method::GET, &uri, None, None)).await;
    assert_eq!(status, StatusCode::OK);
    let ids = sse_ids(&text);
    assert!(ids.len() > 3);
    assert_eq!(ids, (1..=ids.len() as u64).collect::<Vec<_>>());

    let mut resume = request(Method::GET, &format!("/collaborations/{id}/events?follow=false"), Some("ann"), None);
    resume.headers_mut().insert("last-event-id", "2".parse().unwrap());
    let (_, text) = send(&app, resume).await;
    assert_eq!(sse_ids(&text).first(), Some(&3));
}

#[tokio::test]
async fn live_stream_delivers_new_events() {
    let app = app();
    let (id, p) = open_round(&app).await;
    let backlog = sse_ids(&send(&app, request(Method::GET, &format!("/collaborations/{id}/events?follow=false"), Some("ann"), None)).await.1);
    let last = *backlog.last().unwrap();

    let res = app
        .clone()
        .oneshot(request(Method::GET, &format!("/collaborations/{id}/events?from={}", last + 1), Some("ann"), None))
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let mut body = res.into_body();

    let (status, _) = call(&app, Method::POST, &format!("/proposals/{p}/decisions"), "bob", Some(json!({"kind": "approval"}))).await;
    assert_eq!(status, StatusCode::CREATED);

    let mut seen = String::new();
    let read = async {
        while sse_ids(&seen).is_empty() {
            let frame = body.frame().await.unwrap().unwrap();
            if let Ok(data) = frame.into_data() {
                seen.push_str(std::str::from_utf8(&data).unwrap());
            }
        }
    };
    tokio::time::timeout(Duration::from_secs(5), read).await.expect("no live event");
    assert_eq!(sse_ids(&seen)[0], last + 1);
    assert!(seen.contains("DecisionRecorded") || seen.contains("decisionRecorded"), "{seen}");
}
