//! JSON wire types shared by the HTTP service, its client and the CLI.

use serde::{Deserialize, Serialize};

use crate::field::TrainedField;
use crate::query::{QueryResult, QueryTimings};
use crate::rle::{self, RleMask};
use crate::scene::{Camera, QueryConfig, ScoreAggregation};

/// How the query embedding is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuerySource {
    /// A registered query.
    Name { name: String },
    Embedding { embedding: Vec<f32> },
    /// Forwarded to the external text encoder.
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub view: usize,
    #[serde(flatten)]
    pub source: QuerySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_ac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<ScoreAggregation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevancy_floor: Option<f64>,
}

impl QueryRequest {
    pub fn config(&self) -> QueryConfig {
        let d = QueryConfig::default();
        QueryConfig {
            tau_ac: self.tau_ac.unwrap_or(d.tau_ac),
            top_n: self.top_n.unwrap_or(d.top_n),
            aggregation: self.aggregation.unwrap_or(d.aggregation),
            relevancy_floor: self.relevancy_floor,
            canonical: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    /// Over finite distances; absent when there is no target.
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    /// `[x, y]` of the minimum.
    pub argmin: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub view: Option<usize>,
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
    pub targets: Vec<usize>,
    pub mask: RleMask,
    pub mask_area: usize,
    pub distance: DistanceStats,
    pub timings: QueryTimings,
}

impl QueryResponse {
    pub fn from_result(r: &QueryResult) -> Self {
        let finite: Vec<f64> = r.distance.iter().copied().filter(|d| d.is_finite()).collect();
        let stats = if finite.is_empty() {
            DistanceStats {
                min: None,
                max: None,
                mean: None,
                argmin: None,
            }
        } else {
            DistanceStats {
                min: Some(finite.iter().copied().fold(f64::INFINITY, f64::min)),
                max: Some(finite.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                mean: Some(finite.iter().sum::<f64>() / finite.len() as f64),
                argmin: r.best_pixel().map(|(x, y)| [x, y]),
            }
        };
        Self {
            view: r.view,
            width: r.width,
            height: r.height,
            scores: r.scores.clone(),
            targets: r.targets.clone(),
            mask: rle::encode(&r.mask),
            mask_area: r.mask.count(),
            distance: stats,
            timings: r.timings,
        }
    }

    /// Copy with timing fields zeroed, for comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: QueryTimings::default(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub id: usize,
    pub camera: Camera,
    /// Relative URL of the rendered feature map.
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub side: usize,
    pub edge: f64,
    pub centers: Vec<[f64; 3]>,
    pub scaled_centers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub view_count: usize,
    pub views: Vec<ViewInfo>,
    pub width: usize,
    pub height: usize,
    pub embedding_dim: usize,
    pub k: usize,
    pub lattice: LatticeInfo,
    pub canonical: Vec<String>,
    pub queries: Vec<String>,
}

impl SceneInfo {
    pub fn new(field: &TrainedField, queries: Vec<String>) -> Self {
        let l = field.lattice();
        Self {
            view_count: field.view_count(),
            views: field
                .sidecar
                .cameras
                .iter()
                .enumerate()
                .map(|(id, camera)| ViewInfo {
                    id,
                    camera: camera.clone(),
                    thumbnail: format!("/render?view={id}"),
                })
                .collect(),
            width: field.sidecar.width,
            height: field.sidecar.height,
            embedding_dim: field.mapping.embedding_dim,
            k: l.k,
            lattice: LatticeInfo {
                side: l.side,
                edge: l.edge,
                centers: l.centers(),
                scaled_centers: l.cells.iter().map(|c| c.scaled_center()).collect(),
            },
            canonical: field.mapping.canonical.iter().map(|c| c.name.clone()).collect(),
            queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterQuery {
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReloadRequest {
    pub field: Option<String>,
    pub mapping: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Request and response bodies of the external text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub embedding: Vec<f32>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_forms_parse() {
        let r: QueryRequest = serde_json::from_str(r#"{"view":2,"name":"mug","top_n":2}"#).unwrap();
        assert_eq!(r.source, QuerySource::Name { name: "mug".into() });
        assert_eq!(r.config().top_n, 2);
        let r: QueryRequest = serde_json::from_str(r#"{"view":0,"embedding":[0.5,0.5]}"#).unwrap();
        assert!(matches!(r.source, QuerySource::Embedding { .. }));
        let r: QueryRequest = serde_json::from_str(r#"{"view":0,"text":"a red mug"}"#).unwrap();
        assert!(matches!(r.source, QuerySource::Text { .. }));
        let back: QueryRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
