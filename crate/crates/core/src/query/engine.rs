use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{extract_targets, score_grids, select_targets};
use crate::error::{Error, Result};
use crate::field::TrainedField;
use crate::mapper::GridCell;
use crate::scene::{Bitmap, Camera, FeatureMap, QueryConfig};
use crate::splat::render_feature_map;

/// Where to look from: a training view (cached) or an arbitrary camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSpec {
    Id(usize),
    Camera(Camera),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    /// Normalized to unit length before scoring.
    pub embedding: Vec<f32>,
    pub view: ViewSpec,
    pub config: QueryConfig,
}

/// Stage timings in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTimings {
    pub render_ms: f64,
    pub restore_ms: f64,
    pub mask_ms: f64,
    pub render_cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub view: Option<usize>,
    pub width: usize,
    pub height: usize,
    /// Relevancy per lattice cell.
    pub scores: Vec<f64>,
    pub targets: Vec<usize>,
    /// Distance to the nearest target center, 0-255 scale; infinite when
    /// there is no target.
    pub distance: Vec<f64>,
    pub mask: Bitmap,
    pub timings: QueryTimings,
}

impl QueryResult {
    /// Pixel with the smallest distance, lowest index on ties.
    pub fn best_pixel(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in self.distance.iter().enumerate() {
            if d.is_finite() && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Equality ignoring timing fields.
    pub fn same_answer(&self, other: &QueryResult) -> bool {
        let strip = |r: &QueryResult| QueryResult {
            timings: QueryTimings::default(),
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

/// Read-only query front end over a trained field, with a per-view cache
/// of rendered feature maps shared by concurrent callers.
pub struct QueryEngine {
    field: Arc<TrainedField>,
    cache: RwLock<HashMap<usize, Arc<FeatureMap>>>,
}

impl QueryEngine {
    pub fn new(field: Arc<TrainedField>) -> Self {
        Self {
            field,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn field(&self) -> &Arc<TrainedField> {
        &self.field
    }

    pub fn is_cached(&self, view: usize) -> bool {
        self.cache.read().expect("cache lock").contains_key(&view)
    }

    /// The feature map of a training view, rendering it on first use.
    /// Returns whether it came from the cache.
    pub fn feature_map(&self, view: usize) -> Result<(Arc<FeatureMap>, bool)> {
        if let Some(m) = self.cache.read().expect("cache lock").get(&view) {
            return Ok((m.clone(), true));
        }
        let cam = self.field.camera(view)?;
        let s = &self.field.sidecar;
        let map = Arc::new(render_feature_map(&self.field.cloud, cam, &s.render, s.width, s.height, view)?);
        let mut cache = self.cache.write().expect("cache lock");
        Ok((cache.entry(view).or_insert(map).clone(), false))
    }

    /// Seeds the cache with an externally rendered map.
    pub fn insert_feature_map(&self, map: FeatureMap) {
        self.cache.write().expect("cache lock").insert(map.view, Arc::new(map));
    }

    pub fn query(&self, input: &QueryInput) -> Result<QueryResult> {
        input.config.validate()?;
        let dim = self.field.mapping.embedding_dim;
        if input.embedding.len() != dim {
            return Err(Error::contract(format!(
                "query embedding has {} values, field expects {dim}",
                input.embedding.len()
            )));
        }
        let norm = input.embedding.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::domain("query embedding has zero or non-finite norm"));
        }
        let query: Vec<f32> = input.embedding.iter().map(|&v| (v as f64 / norm) as f32).collect();

        let t0 = Instant::now();
        let (map, cached, view) = match &input.view {
            ViewSpec::Id(v) => {
                let (m, hit) = self.feature_map(*v)?;
                (m, hit, Some(*v))
            }
            ViewSpec::Camera(cam) => {
                let s = &self.field.sidecar;
                let m = render_feature_map(&self.field.cloud, cam, &s.render, s.width, s.height, usize::MAX)?;
                (Arc::new(m), false, None)
            }
        };
        let render_ms = if cached { 0.0 } else { t0.elapsed().as_secs_f64() * 1e3 };
        let (result, restore_ms, mask_ms) = answer(&self.field, &map, &query, &input.config)?;
        Ok(QueryResult {
            view,
            timings: QueryTimings {
                render_ms,
                restore_ms,
                mask_ms,
                render_cached: cached,
            },
            ..result
        })
    }
}

/// Scoring, target selection and mask extraction on an already rendered
/// map. Returns the result plus restore and mask times in milliseconds.
pub(crate) fn answer(
    field: &TrainedField,
    map: &FeatureMap,
    query: &[f32],
    cfg: &QueryConfig,
) -> Result<(QueryResult, f64, f64)> {
    let t0 = Instant::now();
    let canon: Vec<Vec<f32>> = match &cfg.canonical {
        Some(c) => c.clone(),
        None => field.mapping.canonical.iter().map(|c| c.embedding.clone()).collect(),
    };
    let lattice = field.lattice();
    let scores = score_grids(lattice, query, &canon, cfg.aggregation)?;
    let targets = select_targets(&scores, cfg.top_n, cfg.relevancy_floor);
    let t1 = Instant::now();
    let cells: Vec<&GridCell> = targets.iter().map(|&t| &lattice.cells[t]).collect();
    let (distance, mask) = extract_targets(map, &cells, cfg.tau_ac);
    let t2 = Instant::now();
    Ok((
        QueryResult {
            view: None,
            width: map.width,
            height: map.height,
            scores,
            targets,
            distance,
            mask,
            timings: QueryTimings::default(),
        },
        (t1 - t0).as_secs_f64() * 1e3,
        (t2 - t1).as_secs_f64() * 1e3,
    ))
}
