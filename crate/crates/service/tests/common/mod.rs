#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use pinview_core::corpus::{Corpus, FeatureSpec, ImageRecord};
use pinview_core::relevance::{train_predictor, TrainingOptions};
use pinview_core::sim::{generate_synthetic_corpus, generate_synthetic_pool, SyntheticCorpusConfig, SyntheticPoolConfig};
use pinview_service::store::StoreLayout;
use pinview_service::{router, AppState, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

/// Data directory with a 200-image synthetic corpus `toy`, a small corpus
/// `files` backed by files on disk, and a trained default predictor.
pub fn seed_data_dir(root: &Path) -> ServiceConfig {
    let layout = StoreLayout::new(root);
    layout.create_dirs().unwrap();
    let toy = generate_synthetic_corpus(&SyntheticCorpusConfig { name: "toy".into(), images: 200, ..Default::default() }, 1)
        .unwrap();
    toy.save(&layout.corpus_dir("toy")).unwrap();

    let assets = root.join("assets");
    std::fs::create_dir_all(&assets).unwrap();
    let images = (0..20)
        .map(|i| {
            let path = assets.join(format!("f{i:02}.png"));
            std::fs::write(&path, format!("not really a png {i}")).unwrap();
            ImageRecord::new(format!("f{i:02}"), path.display().to_string()).with_feature("v", vec![i as f64, 1.0])
        })
        .collect();
    Corpus::new("files", vec![FeatureSpec::imported("v", 2)], images)
        .unwrap()
        .save(&layout.corpus_dir("files"))
        .unwrap();

    let pool = generate_synthetic_pool(&SyntheticPoolConfig::with_separation(3.0), 5).unwrap();
    let predictor = train_predictor(&pool.training_set(), &TrainingOptions::default()).unwrap();
    std::fs::write(layout.predictor_path("default"), predictor.to_json().unwrap()).unwrap();

    ServiceConfig {
        data_dir: root.to_path_buf(),
        seed: Some(11),
        ..Default::default()
    }
}

pub struct Client {
    pub state: Arc<AppState>,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

impl Client {
    pub fn open(config: &ServiceConfig) -> Self {
        Client { state: Arc::new(AppState::open(config).unwrap()) }
    }

    pub async fn send(&self, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(k) = key {
            req = req.header("idempotency-key", k);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let response = router(self.state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
        let status = response.status();
        let headers = response.headers().clone();
        let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, headers, bytes }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send("GET", uri, None, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.send("POST", uri, Some(body), None).await
    }

    pub async fn start(&self, body: Value) -> Value {
        let r = self.post("/api/sessions", body).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
        r.json()
    }
}

pub fn collage_ids(payload: &Value) -> Vec<String> {
    payload["collage"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["id"].as_str().unwrap().to_string())
        .collect()
}
