//! Async HTTP front end over [`gridfield_core`].
//!
//! | method | path              | body / query            | response          |
//! |--------|-------------------|-------------------------|-------------------|
//! | GET    | `/health`         |                         | [`Health`]        |
//! | GET    | `/scene`          |                         | [`SceneInfo`]     |
//! | GET    | `/render`         | `?view=ID`              | `image/png`       |
//! | POST   | `/query`          | [`QueryRequest`]        | [`QueryResponse`] |
//! | GET    | `/queries`        |                         | names             |
//! | PUT    | `/queries/{name}` | [`RegisterQuery`]       | 204               |
//! | POST   | `/reload`         | [`ReloadRequest`]       | [`SceneInfo`]     |
//!
//! Errors come back as [`ErrorBody`] with 400 for malformed input, 404 for
//! unknown views or query names, 409 when no field is loaded and 502 when
//! the text encoder fails.

mod encoder;
mod error;
mod routes;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use gridfield_core::field::TrainedField;
use gridfield_core::query::QueryEngine;
use tokio::net::TcpListener;

pub use encoder::Encoder;
pub use error::ApiError;
pub use gridfield_core::api::{
    ErrorBody, Health, QueryRequest, QueryResponse, RegisterQuery, ReloadRequest, SceneInfo,
};
pub use routes::router;

/// Environment variable holding the encoder's full POST URL.
pub const ENCODER_ENV: &str = "GRIDFIELD_ENCODER_URL";

/// A loaded field and where it came from.
pub struct Loaded {
    pub engine: QueryEngine,
    pub field_path: PathBuf,
    pub mapping_path: PathBuf,
}

impl Loaded {
    pub fn open(field_path: &Path, mapping_path: &Path) -> gridfield_core::Result<Self> {
        let field = TrainedField::load(field_path, mapping_path)?;
        Ok(Self {
            engine: QueryEngine::new(Arc::new(field)),
            field_path: field_path.to_path_buf(),
            mapping_path: mapping_path.to_path_buf(),
        })
    }
}

/// Shared service state. The loaded field is swapped as a whole on reload,
/// so in-flight queries finish against the field they started with.
pub struct AppState {
    loaded: RwLock<Option<Arc<Loaded>>>,
    queries: RwLock<BTreeMap<String, Vec<f32>>>,
    encoder: Option<Encoder>,
}

impl AppState {
    pub fn new(loaded: Option<Loaded>, encoder: Option<Encoder>) -> Self {
        Self {
            loaded: RwLock::new(loaded.map(Arc::new)),
            queries: RwLock::new(BTreeMap::new()),
            encoder,
        }
    }

    pub fn loaded(&self) -> Option<Arc<Loaded>> {
        self.loaded.read().expect("state lock").clone()
    }

    pub fn swap(&self, next: Loaded) -> Arc<Loaded> {
        let next = Arc::new(next);
        *self.loaded.write().expect("state lock") = Some(next.clone());
        next
    }

    pub fn register(&self, name: &str, embedding: Vec<f32>) {
        self.queries.write().expect("query lock").insert(name.to_string(), embedding);
    }

    pub fn registered(&self, name: &str) -> Option<Vec<f32>> {
        self.queries.read().expect("query lock").get(name).cloned()
    }

    pub fn query_names(&self) -> Vec<String> {
        self.queries.read().expect("query lock").keys().cloned().collect()
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_ref()
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
