//! Helpers for driving the studio router in-process.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request};
use http_body_util::BodyExt;
use logoforge::checkpoint::TensorMap;
use logoforge::latent::{direction_from_examples, sample_z, store_direction, Prior};
use logoforge::models::{Conditioning, GanModel, ModelConfig};
use logoforge::studio::{router, Studio};
use serde_json::Value;
use tower::ServiceExt;

/// A small untrained DCGAN-LC studio with one stored direction `bold`.
pub fn tiny_studio(k: usize, conditioning: Conditioning, seed: u64) -> Studio {
    let mut cfg = ModelConfig::dcgan_desk(k, conditioning);
    cfg.g_widths = vec![16, 8];
    cfg.d_widths = vec![8, 16];
    let model = GanModel::new(cfg.clone(), seed).unwrap();
    let pos: Vec<Vec<f64>> = sample_z(4, cfg.latent_dim, Prior::Gaussian, 1).unwrap().into_iter().map(|z| z.values).collect();
    let neg: Vec<Vec<f64>> = sample_z(4, cfg.latent_dim, Prior::Gaussian, 2).unwrap().into_iter().map(|z| z.values).collect();
    let mut extra = TensorMap::new();
    store_direction(&direction_from_examples("bold", &pos, &neg, None).unwrap(), &mut extra).unwrap();
    Studio::new(model.generator(), &extra).unwrap()
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

/// Sends one request and returns the status, raw body bytes and parsed JSON.
pub async fn call(studio: &Arc<Studio>, method: Method, uri: &str, body: &str) -> (u16, Vec<u8>, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router(studio.clone()).oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, bytes, v)
}
