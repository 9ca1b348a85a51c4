//! Open-vocabulary queries against a trained field.

mod engine;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mapper::{GridCell, GridLattice};
use crate::scene::{Bitmap, FeatureMap, ScoreAggregation, FEATURE_SCALE};

pub use engine::{QueryEngine, QueryInput, QueryResult, QueryTimings, ViewSpec};

fn dot(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "embedding lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum())
}

/// Pairwise-softmax relevancy of an image embedding to a query, taking the
/// least favourable canonical phrase.
pub fn relevancy_score(img: &[f32], query: &[f32], canon: &[Vec<f32>]) -> Result<f64> {
    if canon.is_empty() {
        return Err(Error::domain("canonical phrase set is empty"));
    }
    let dq = dot(img, query)?;
    let mut best = f64::INFINITY;
    for c in canon {
        let dc = dot(img, c)?;
        best = best.min(1.0 / (1.0 + (dc - dq).exp()));
    }
    Ok(best)
}

/// One relevancy score per lattice cell, reducing each cell's stored
/// embeddings with `aggregation`.
pub fn score_grids(
    lattice: &GridLattice,
    query: &[f32],
    canon: &[Vec<f32>],
    aggregation: ScoreAggregation,
) -> Result<Vec<f64>> {
    if lattice.cells.is_empty() {
        return Err(Error::EmptyLattice);
    }
    lattice
        .cells
        .iter()
        .map(|cell| {
            if cell.entries.is_empty() {
                return Err(Error::contract(format!(
                    "cell {} has no stored embeddings",
                    cell.object_id
                )));
            }
            let scores = cell
                .entries
                .iter()
                .map(|e| relevancy_score(&e.embedding, query, canon))
                .collect::<Result<Vec<f64>>>()?;
            Ok(match aggregation {
                ScoreAggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ScoreAggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            })
        })
        .collect()
}

/// Cells ordered by descending score (lower id first on ties), cut to
/// `top_n` and to scores at or above `floor`.
pub fn select_targets(scores: &[f64], top_n: usize, floor: Option<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(top_n)
        .filter(|&i| floor.is_none_or(|f| scores[i] >= f))
        .collect()
}

/// Per-pixel distance, in the 0-255 scale, from the rendered feature to the
/// cell's center, and the pixels closer than `tau_ac`.
pub fn extract_target_mask(map: &FeatureMap, cell: &GridCell, tau_ac: f64) -> (Vec<f64>, Bitmap) {
    extract_targets(map, &[cell], tau_ac)
}

/// Multi-target form: the distance is to the nearest of the given cells,
/// so the mask is the union of the single-cell masks.
pub fn extract_targets(map: &FeatureMap, cells: &[&GridCell], tau_ac: f64) -> (Vec<f64>, Bitmap) {
    let centers: Vec<[f64; 3]> = cells.iter().map(|c| c.scaled_center()).collect();
    let w = map.width;
    let mut distance = vec![f64::INFINITY; map.pixel_count()];
    if w > 0 {
        distance.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, d) in row.iter_mut().enumerate() {
                let f = map.get(x, y).map(|v| v * FEATURE_SCALE);
                for c in &centers {
                    let e = ((f[0] - c[0]).powi(2) + (f[1] - c[1]).powi(2) + (f[2] - c[2]).powi(2)).sqrt();
                    if e < *d {
                        *d = e;
                    }
                }
            }
        });
    }
    let mask = Bitmap::from_fn(map.width, map.height, |x, y| distance[y * w + x] < tau_ac);
    (distance, mask)
}
