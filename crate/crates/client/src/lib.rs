//! Async client for the gridfield service.

use gridfield_core::api::{
    ErrorBody, Health, QueryRequest, QueryResponse, RegisterQuery, ReloadRequest, SceneInfo,
};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    /// The service answered with a non-success status.
    #[error("service returned {status}: {message}")]
    Status { status: u16, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn checked(resp: reqwest::Response) -> Result<reqwest::Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Status {
            status: status.as_u16(),
            message,
        })
    }

    async fn json<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        Ok(Self::checked(resp).await?.json().await?)
    }

    pub async fn health(&self) -> Result<Health> {
        Self::json(self.http.get(self.url("/health")).send().await?).await
    }

    pub async fn scene(&self) -> Result<SceneInfo> {
        Self::json(self.http.get(self.url("/scene")).send().await?).await
    }

    /// PNG bytes of a view's rendered feature map.
    pub async fn render(&self, view: usize) -> Result<Vec<u8>> {
        let resp = self.http.get(self.url(&format!("/render?view={view}"))).send().await?;
        Ok(Self::checked(resp).await?.bytes().await?.to_vec())
    }

    pub async fn query(&self, req: &QueryRequest) -> Result<QueryResponse> {
        Self::json(self.http.post(self.url("/query")).json(req).send().await?).await
    }

    pub async fn queries(&self) -> Result<Vec<String>> {
        Self::json(self.http.get(self.url("/queries")).send().await?).await
    }

    pub async fn register(&self, name: &str, embedding: Vec<f32>) -> Result<()> {
        let resp = self
            .http
            .put(self.url(&format!("/queries/{name}")))
            .json(&RegisterQuery { embedding })
            .send()
            .await?;
        Self::checked(resp).await.map(|_| ())
    }

    pub async fn reload(&self, req: &ReloadRequest) -> Result<SceneInfo> {
        Self::json(self.http.post(self.url("/reload")).json(req).send().await?).await
    }
}
