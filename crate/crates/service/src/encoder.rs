use axum::http::StatusCode;
use gridfield_core::api::{EncodeRequest, EncodeResponse};

use crate::ApiError;

/// Client for the external text encoder: `POST {"text"}` returning
/// `{"embedding"}`.
#[derive(Debug, Clone)]
pub struct Encoder {
    url: String,
    http: reqwest::Client,
}

impl Encoder {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            http: reqwest::Client::new(),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(crate::ENCODER_ENV).ok().filter(|u| !u.is_empty()).map(Self::new)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub async fn encode(&self, text: &str) -> Result<Vec<f32>, ApiError> {
        let bad = |m: String| ApiError::new(StatusCode::BAD_GATEWAY, format!("text encoder: {m}"));
        let resp = self
            .http
            .post(&self.url)
            .json(&EncodeRequest { text: text.to_string() })
            .send()
            .await
            .map_err(|e| bad(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(bad(format!("status {}", resp.status())));
        }
        let body: EncodeResponse = resp.json().await.map_err(|e| bad(e.to_string()))?;
        if body.embedding.is_empty() {
            return Err(bad("empty embedding".into()));
        }
        Ok(body.embedding)
    }
}
