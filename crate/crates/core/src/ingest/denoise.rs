use serde::{Deserialize, Serialize};

use crate::scene::{Dataset, MaskRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseParams {
    /// Masks smaller than this fraction of the image are dropped.
    pub min_area_frac: f64,
    /// Within a view, a mask overlapping an earlier survivor with IoU above
    /// this is dropped.
    pub dedup_iou: f64,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            min_area_frac: 0.001,
            dedup_iou: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutcome {
    pub masks: Vec<Vec<MaskRecord>>,
    /// Views left without any mask.
    pub emptied_views: Vec<usize>,
    pub removed: usize,
}

fn iou(a: &MaskRecord, b: &MaskRecord) -> f64 {
    let inter = a.bitmap.intersection_count(&b.bitmap);
    let union = a.area + b.area - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Drops speckle masks and near-duplicates. Survivors keep their order and
/// local indices.
pub fn denoise_masks(
    masks: &[Vec<MaskRecord>],
    width: usize,
    height: usize,
    params: DenoiseParams,
) -> DenoiseOutcome {
    let min_area = params.min_area_frac * (width * height) as f64;
    let mut out = Vec::with_capacity(masks.len());
    let mut emptied_views = Vec::new();
    let mut removed = 0;
    for (t, view_masks) in masks.iter().enumerate() {
        let mut kept: Vec<MaskRecord> = Vec::new();
        for m in view_masks {
            let keep = (m.area as f64) >= min_area
                && !kept.iter().any(|k| iou(k, m) > params.dedup_iou);
            if keep {
                kept.push(m.clone());
            } else {
                removed += 1;
            }
        }
        if kept.is_empty() && !view_masks.is_empty() {
            emptied_views.push(t);
        }
        out.push(kept);
    }
    DenoiseOutcome {
        masks: out,
        emptied_views,
        removed,
    }
}

pub fn denoise_dataset(ds: &mut Dataset, params: DenoiseParams) -> DenoiseOutcome {
    let outcome = denoise_masks(&ds.masks, ds.width(), ds.height(), params);
    ds.masks = outcome.masks.clone();
    outcome
}
