mod common;

use std::collections::BTreeSet;

use axum::http::StatusCode;
use pinview_core::gaze::Rect;
use serde_json::{json, Value};

use common::*;

fn rect(v: &Value) -> Rect {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test]
async fn create_session_returns_a_tiled_collage() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let s = client.start(json!({"corpus": "toy", "modality": "click"})).await;
    let id = s["session"].as_str().unwrap();
    assert_eq!(id.len(), 32);
    assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(s["round"], 0);
    let cells: Vec<Rect> = s["collage"].as_array().unwrap().iter().map(|d| rect(&d["cell"])).collect();
    assert_eq!(cells.len(), 15);
    let (w, h) = (s["screen"][0].as_f64().unwrap(), s["screen"][1].as_f64().unwrap());
    let area: f64 = cells.iter().map(|r| r.w * r.h).sum();
    assert!((area - w * h).abs() < 1e-6);
    for (i, a) in cells.iter().enumerate() {
        assert!(a.x >= 0.0 && a.y >= 0.0 && a.x + a.w <= w + 1e-9 && a.y + a.h <= h + 1e-9);
        for b in &cells[i + 1..] {
            assert!(!a.overlaps(b));
        }
    }
    let xs: BTreeSet<u64> = cells.iter().map(|r| r.x.to_bits()).collect();
    let ys: BTreeSet<u64> = cells.iter().map(|r| r.y.to_bits()).collect();
    assert_eq!((xs.len(), ys.len()), (5, 3));
    let first = &s["collage"][0];
    assert_eq!(first["url"], format!("/assets/{}?corpus=toy", first["id"].as_str().unwrap()));

    let other = client.start(json!({"corpus": "toy", "modality": "click"})).await;
    assert_ne!(other["session"], s["session"]);
}

#[tokio::test]
async fn create_session_errors() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let r = client.post("/api/sessions", json!({"corpus": "toy", "modality": "click", "rounds": 0})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = client.post("/api/sessions", json!({"corpus": "missing", "modality": "click"})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = client.post("/api/sessions", json!({"corpus": "toy", "modality": "telepathy"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = client.post("/api/sessions", json!({"corpus": "toy", "target": "nope"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = client.send("POST", "/api/sessions", None, None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn click_feedback_advances_without_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let s = client.start(json!({"corpus": "toy", "modality": "click", "rounds": 4})).await;
    let id = s["session"].as_str().unwrap().to_string();
    let mut seen: BTreeSet<String> = collage_ids(&s).into_iter().collect();
    let mut current = collage_ids(&s);
    for round in 0..3 {
        let r = client
            .post(&format!("/api/sessions/{id}/feedback"), json!({"round": round, "clicks": [current[7]]}))
            .await;
        assert_eq!(r.status, StatusCode::OK);
        let body = r.json();
        assert_eq!(body["status"], "collage");
        assert_eq!(body["round"], round + 1);
        current = collage_ids(&body);
        assert_eq!(current.len(), 15);
        for c in &current {
            assert!(seen.insert(c.clone()), "{c} repeated");
        }
    }
    let r = client.post(&format!("/api/sessions/{id}/feedback"), json!({"round": 3})).await;
    let body = r.json();
    assert_eq!(body["status"], "finished");
    assert_eq!(body["summary"]["rounds_completed"], 4);
    assert_eq!(body["summary"]["finished"], true);
    let again = client.post(&format!("/api/sessions/{id}/feedback"), json!({"round": 4})).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn feedback_errors() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let s = client.start(json!({"corpus": "toy", "modality": "click"})).await;
    let id = s["session"].as_str().unwrap();
    let url = format!("/api/sessions/{id}/feedback");

    let r = client.post(&url, json!({"round": 2})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["current_round"], 0);

    let r = client.post(&url, json!({"round": 0, "clicks": ["no-such-image"]})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let shown: BTreeSet<String> = collage_ids(&s).into_iter().collect();
    let hidden = (0..200).map(|i| format!("img{i:04}")).find(|x| !shown.contains(x)).unwrap();
    let r = client.post(&url, json!({"round": 0, "clicks": [hidden]})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = client.post("/api/sessions/0123/feedback", json!({"round": 0})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(client.get("/api/sessions/0123/summary").await.status, StatusCode::NOT_FOUND);
    // Nothing above advanced the session.
    assert_eq!(client.get(&format!("/api/sessions/{id}")).await.json()["round"], 0);
}

#[tokio::test]
async fn idempotency_key_replays_the_response() {
    let dir = tempfile::tempdir().unwrap();
    let config = seed_data_dir(dir.path());
    let client = Client::open(&config);
    let s = client.start(json!({"corpus": "toy", "modality": "click"})).await;
    let id = s["session"].as_str().unwrap().to_string();
    let url = format!("/api/sessions/{id}/feedback");
    let body = json!({"round": 0, "clicks": [collage_ids(&s)[2]]});
    let a = client.send("POST", &url, Some(body.clone()), Some("k-1")).await;
    let b = client.send("POST", &url, Some(body.clone()), Some("k-1")).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.bytes, b.bytes);
    assert_eq!(client.get(&format!("/api/sessions/{id}")).await.json()["round"], 1);

    let different = client.send("POST", &url, Some(json!({"round": 0})), Some("k-1")).await;
    assert_eq!(different.status, StatusCode::UNPROCESSABLE_ENTITY);

    // Keys survive a restart.
    drop(client);
    let client = Client::open(&config);
    let c = client.send("POST", &url, Some(body), Some("k-1")).await;
    assert_eq!(a.bytes, c.bytes);
    assert_eq!(client.get(&format!("/api/sessions/{id}")).await.json()["round"], 1);
}

#[tokio::test]
async fn summary_withholds_labels_until_finished() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let s = client.start(json!({"corpus": "toy", "modality": "click", "rounds": 3, "target": "cat00"})).await;
    let id = s["session"].as_str().unwrap().to_string();
    for d in s["collage"].as_array().unwrap() {
        assert_eq!(d.as_object().unwrap().len(), 3, "{d}");
    }
    let summary = client.get(&format!("/api/sessions/{id}/summary")).await.json();
    assert_eq!(summary["precision_curve"].as_array().unwrap().len(), 0);

    let mut collage = collage_ids(&s);
    for round in 0..2 {
        let r = client
            .post(&format!("/api/sessions/{id}/feedback"), json!({"round": round, "clicks": [collage[0]]}))
            .await
            .json();
        collage = collage_ids(&r);
        let summary = client.get(&format!("/api/sessions/{id}/summary")).await.json();
        assert_eq!(summary["precision_curve"].as_array().unwrap().len(), round + 1);
        assert_eq!(summary["precision_basis"], "feedback");
        assert!(summary["relevant_per_round"].is_null());
        assert!(summary["average_precision"].is_null());
        assert!(summary["rounds"].as_array().unwrap().iter().all(|r| r["relevant"].is_null()));
    }
    let done = client.post(&format!("/api/sessions/{id}/feedback"), json!({"round": 2})).await.json();
    let summary = &done["summary"];
    assert_eq!(summary["precision_basis"], "labels");
    assert_eq!(summary["relevant_per_round"].as_array().unwrap().len(), 3);
    assert!(summary["average_precision"].is_number());
    assert_eq!(summary["precision_curve"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn hover_samples_count_as_gaze() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let s = client.start(json!({"corpus": "toy", "modality": "gaze", "rounds": 2})).await;
    let id = s["session"].as_str().unwrap().to_string();
    let cell = rect(&s["collage"][4]["cell"]);
    // 400 ms of hover over cell 4, one sample per 20 ms.
    let samples: Vec<Value> = (0..20)
        .map(|k| json!({"t": 20.0 * k as f64, "x": cell.x + cell.w / 2.0, "y": cell.y + cell.h / 2.0, "pupil": 0.0, "valid": true}))
        .collect();
    let r = client.post(&format!("/api/sessions/{id}/feedback"), json!({"round": 0, "gaze": samples})).await;
    assert_eq!(r.status, StatusCode::OK);
    let summary = client.get(&format!("/api/sessions/{id}/summary")).await.json();
    let scores: Vec<f64> = summary["rounds"][0]["scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(scores.len(), 15);
    for (k, score) in scores.iter().enumerate() {
        if k == 4 {
            assert_ne!(*score, 0.05);
        } else {
            assert_eq!(*score, 0.05);
        }
    }
}

#[tokio::test]
async fn corpora_and_assets() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::open(&seed_data_dir(dir.path()));
    let list = client.get("/api/corpora").await.json();
    let names: Vec<&str> = list.as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, vec!["files", "toy"]);
    assert_eq!(list[1]["images"], 200);
    assert_eq!(list[1]["categories"].as_object().unwrap().len(), 10);

    let r = client.get("/assets/f03?corpus=files").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.bytes, b"not really a png 3");
    assert_eq!(r.headers["content-type"], "image/png");
    assert!(r.headers["cache-control"].to_str().unwrap().contains("max-age"));

    assert_eq!(client.get("/assets/f99?corpus=files").await.status, StatusCode::NOT_FOUND);
    assert_eq!(client.get("/assets/f03?corpus=nope").await.status, StatusCode::NOT_FOUND);
    // Synthetic images have no file behind them.
    assert_eq!(client.get("/assets/img0001?corpus=toy").await.status, StatusCode::NOT_FOUND);
    assert_eq!(client.get("/assets/f03").await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn expired_sessions_are_gone() {
    let dir = tempfile::tempdir().unwrap();
    let config = pinview_service::ServiceConfig { session_ttl_secs: 0, ..seed_data_dir(dir.path()) };
    let client = Client::open(&config);
    let s = client.start(json!({"corpus": "toy", "modality": "click"})).await;
    std::thread::sleep(std::time::Duration::from_millis(20));
    let id = s["session"].as_str().unwrap();
    let r = client.post(&format!("/api/sessions/{id}/feedback"), json!({"round": 0})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}
