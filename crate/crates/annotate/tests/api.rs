use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fillerkit_annotate::{router, AppState, ErrorBody, NextResponse};
use fillerkit_core::annotation::{AgreementStats, AnnotationStore, CandidateState, ResolutionState};
use fillerkit_core::candidates::{CandidateClip, CandidateStatus};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use tower::ServiceExt;

fn clip(i: usize) -> CandidateClip {
    CandidateClip {
        id: format!("ep_{}_{}", 3000 + i, 3300 + i),
        episode: "ep".into(),
        gap_start_s: 3.0,
        gap_end_s: 3.3,
        clip_path: format!("clips/c{i}.wav"),
        highlight_start_s: 3.0,
        highlight_end_s: 3.3,
        status: CandidateStatus::Unlabeled,
        label: String::new(),
    }
}

struct Fixture {
    app: Router,
    state: AppState,
    dir: tempfile::TempDir,
    clock: Arc<AtomicU64>,
}

fn fixture(n: usize, allow: Option<&[&str]>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("clips")).unwrap();
    for i in 0..n {
        std::fs::write(dir.path().join(format!("clips/c{i}.wav")), format!("RIFF{i}")).unwrap();
    }
    let mut store = AnnotationStore::open((0..n).map(clip).collect(), &dir.path().join("labels.jsonl")).unwrap();
    if let Some(a) = allow {
        store = store.with_allowlist(a.iter().map(|s| s.to_string()));
    }
    let clock = Arc::new(AtomicU64::new(1_000));
    let c = clock.clone();
    let state = AppState::new(store, dir.path().to_path_buf()).with_clock(Arc::new(move || c.fetch_add(1, Ordering::SeqCst)));
    Fixture {
        app: router(state.clone(), None),
        state,
        dir,
        clock,
    }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json<T: DeserializeOwned>(app: &Router, uri: &str) -> (StatusCode, Option<T>) {
    let (s, body) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).ok())
}

async fn post_label(app: &Router, cand: &str, who: &str, label: &str) -> (StatusCode, Vec<u8>) {
    let body = serde_json::json!({"candidate_id": cand, "annotator_id": who, "label": label});
    send(
        app,
        Request::post("/api/label")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

async fn next_id(app: &Router, who: &str) -> Option<String> {
    let (s, r) = get_json::<NextResponse>(app, &format!("/api/next?annotator={who}")).await;
    match s {
        StatusCode::OK => Some(r.unwrap().candidate.id),
        StatusCode::NO_CONTENT => None,
        other => panic!("unexpected status {other}"),
    }
}

fn state_of(body: &[u8]) -> ResolutionState {
    serde_json::from_slice::<CandidateState>(body).unwrap().state
}

#[tokio::test]
async fn agreeing_pair_resolves() {
    let f = fixture(2, None);
    let c = next_id(&f.app, "ann1").await.unwrap();
    let (s, body) = post_label(&f.app, &c, "ann1", "uh").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state_of(&body), ResolutionState::NeedsSecond);
    assert_eq!(next_id(&f.app, "ann2").await.unwrap(), c);
    let (_, body) = post_label(&f.app, &c, "ann2", "uh").await;
    assert_eq!(state_of(&body), ResolutionState::Resolved("uh".into()));
}

#[tokio::test]
async fn disagreement_goes_to_a_third_annotator() {
    let f = fixture(1, None);
    let c = clip(0).id;
    post_label(&f.app, &c, "a", "uh").await;
    let (_, body) = post_label(&f.app, &c, "b", "um").await;
    assert_eq!(state_of(&body), ResolutionState::NeedsThird);
    assert_eq!(next_id(&f.app, "a").await, None);
    assert_eq!(next_id(&f.app, "c").await.unwrap(), c);
    let (_, body) = post_label(&f.app, &c, "c", "um").await;
    assert_eq!(state_of(&body), ResolutionState::Resolved("um".into()));

    let f = fixture(1, None);
    post_label(&f.app, &c, "a", "uh").await;
    post_label(&f.app, &c, "b", "um").await;
    let (_, body) = post_label(&f.app, &c, "c", "breath").await;
    assert_eq!(state_of(&body), ResolutionState::Unresolved);
    assert_eq!(next_id(&f.app, "d").await, None);
}

#[tokio::test]
async fn concurrent_polls_get_distinct_candidates() {
    let f = fixture(3, None);
    let (a, b, c) = tokio::join!(next_id(&f.app, "a"), next_id(&f.app, "b"), next_id(&f.app, "c"));
    let mut ids = vec![a.unwrap(), b.unwrap(), c.unwrap()];
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 3);
    assert_eq!(next_id(&f.app, "d").await, None);
    // Leases lapse after ten minutes.
    f.clock.fetch_add(10 * 60 * 1000 + 1, Ordering::SeqCst);
    assert!(next_id(&f.app, "d").await.is_some());
}

#[tokio::test]
async fn labelled_candidates_are_never_reserved() {
    let f = fixture(2, None);
    let first = next_id(&f.app, "a").await.unwrap();
    post_label(&f.app, &first, "a", "breath").await;
    let second = next_id(&f.app, "a").await.unwrap();
    assert_ne!(first, second);
    post_label(&f.app, &second, "a", "music").await;
    assert_eq!(next_id(&f.app, "a").await, None);
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let f = fixture(1, Some(&["a", "b"]));
    let c = clip(0).id;
    let (s, body) = post_label(&f.app, &c, "a", "hmm").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(serde_json::from_slice::<ErrorBody>(&body).unwrap().error.contains("hmm"));
    assert_eq!(post_label(&f.app, "nope", "a", "uh").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post_label(&f.app, &c, "zed", "uh").await.0, StatusCode::FORBIDDEN);
    let (s, _) = get_json::<ErrorBody>(&f.app, "/api/next?annotator=zed").await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    assert_eq!(post_label(&f.app, &c, "a", "uh").await.0, StatusCode::OK);
    // Resubmitting the same label is harmless; changing it is not.
    assert_eq!(post_label(&f.app, &c, "a", "uh").await.0, StatusCode::OK);
    assert_eq!(post_label(&f.app, &c, "a", "um").await.0, StatusCode::CONFLICT);

    let (s, _) = send(&f.app, Request::post("/api/label").body(Body::from("{")).unwrap()).await;
    assert!(s.is_client_error());
}

#[tokio::test]
async fn serves_clip_audio() {
    let f = fixture(2, None);
    let uri = format!("/api/audio/{}", clip(1).id);
    let resp = f.app.clone().oneshot(Request::get(&uri).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "audio/wav");
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"RIFF1");
    std::fs::remove_file(f.dir.path().join("clips/c0.wav")).unwrap();
    let (s, _) = send(&f.app, Request::get(format!("/api/audio/{}", clip(0).id)).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = send(&f.app, Request::get("/api/audio/unknown").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stats_and_log_replay() {
    let f = fixture(4, None);
    let ids: Vec<String> = (0..4).map(|i| clip(i).id).collect();
    post_label(&f.app, &ids[0], "a", "uh").await;
    post_label(&f.app, &ids[0], "b", "uh").await;
    post_label(&f.app, &ids[1], "a", "um").await;
    post_label(&f.app, &ids[1], "b", "uh").await;
    post_label(&f.app, &ids[1], "c", "um").await;
    post_label(&f.app, &ids[2], "a", "laughter").await;
    let (s, st) = get_json::<AgreementStats>(&f.app, "/api/stats").await;
    assert_eq!(s, StatusCode::OK);
    let st = st.unwrap();
    assert_eq!((st.resolved, st.needs_second, st.needs_first, st.records), (2, 1, 1, 6));
    assert!((st.agreement_rate - 0.5).abs() < 1e-12);
    assert_eq!(st.per_label_agreement["uh"], 1.0);
    assert_eq!(st.per_label_agreement["um"], 0.0);

    let replayed = AnnotationStore::open((0..4).map(clip).collect(), &f.dir.path().join("labels.jsonl")).unwrap();
    assert_eq!(replayed.snapshot(), f.state.store.lock().unwrap().snapshot());
    assert_eq!(replayed.stats(), st);
}
