use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_lattice, count_mask_correspondences, similarity_hybrid, CellEntry, GridLattice};
use crate::error::{Error, Result};
use crate::scene::{Dataset, MaskKey, MaskRecord, MatchParams};

/// How a mask obtained its object index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Mask of the first view; its index is its position.
    Init,
    Keypoints { source: MaskKey, count: usize },
    Similarity { source: MaskKey, value: f64 },
    New {
        best_count: Option<usize>,
        best_similarity: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub key: MaskKey,
    pub idx: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingResult {
    /// One entry per mask, in `(view, local)` order.
    pub assignments: Vec<Assignment>,
    pub k: usize,
    pub params: MatchParams,
    pub lattice: GridLattice,
}

impl MappingResult {
    pub fn idx(&self, key: MaskKey) -> Option<usize> {
        self.assignments
            .binary_search_by(|a| a.key.cmp(&key))
            .ok()
            .map(|i| self.assignments[i].idx)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.idx).collect()
    }
}

/// Groups the dataset's masks into objects view by view.
///
/// Each mask first looks for a prior mask sharing at least `tau_kp`
/// keypoint matches, then for a prior mask with hybrid similarity at least
/// `theta`; otherwise it opens a new object. Masks of the current view only
/// become candidates once that view is finished. The keypoint matches used
/// are those stored in the dataset.
pub fn cross_view_grid_mapping(ds: &Dataset, params: &MatchParams) -> Result<MappingResult> {
    params.validate()?;
    if ds.mask_count() == 0 {
        return Err(Error::NothingToMap);
    }
    let mut k = 0usize;
    let mut accumulated: Vec<(&MaskRecord, usize)> = Vec::new();
    let mut assignments = Vec::with_capacity(ds.mask_count());

    for (t, masks) in ds.masks.iter().enumerate() {
        let mut ordered: Vec<&MaskRecord> = masks.iter().collect();
        ordered.sort_by_key(|m| m.local);
        let mut this_view = Vec::with_capacity(ordered.len());
        for m in ordered {
            if m.view != t {
                return Err(Error::contract(format!(
                    "mask ({}, {}) listed under view {t}",
                    m.view, m.local
                )));
            }
            let (idx, provenance) = if t == 0 {
                k += 1;
                (k - 1, Provenance::Init)
            } else {
                assign(m, t, &accumulated, ds, params, &mut k)?
            };
            this_view.push((m, idx));
            assignments.push(Assignment {
                key: m.key(),
                idx,
                provenance,
            });
        }
        accumulated.extend(this_view);
    }
    assignments.sort_by_key(|a| a.key);

    let mut lattice = build_lattice(k)?;
    for a in &assignments {
        let m = ds.mask(a.key).expect("assigned mask exists");
        lattice.cells[a.idx].entries.push(CellEntry {
            view: a.key.view,
            local: a.key.local,
            embedding: m.embedding.clone(),
        });
    }
    Ok(MappingResult {
        assignments,
        k,
        params: params.clone(),
        lattice,
    })
}

fn assign(
    m: &MaskRecord,
    t: usize,
    accumulated: &[(&MaskRecord, usize)],
    ds: &Dataset,
    params: &MatchParams,
    k: &mut usize,
) -> Result<(usize, Provenance)> {
    let idx_of = |key: MaskKey| {
        accumulated
            .iter()
            .find(|(p, _)| p.key() == key)
            .map(|(_, i)| *i)
            .expect("candidate is accumulated")
    };
    let mut best_count = None;
    if params.use_keypoints {
        let first_view = params.window.map_or(0, |w| t.saturating_sub(w));
        let candidates: Vec<&MaskRecord> = accumulated
            .iter()
            .filter(|(p, _)| p.view >= first_view)
            .map(|(p, _)| *p)
            .collect();
        if let Some((source, count)) = count_mask_correspondences(m, &candidates, &ds.matches) {
            if count >= params.tau_kp {
                return Ok((idx_of(source), Provenance::Keypoints { source, count }));
            }
            best_count = Some(count);
        }
    }
    let sims: Vec<f64> = accumulated
        .par_iter()
        .map(|(p, _)| similarity_hybrid(m, p, params))
        .collect::<Result<_>>()?;
    // First maximum in accumulation order, which is (view, local) order.
    let best = sims
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |b, (i, &s)| match b {
            Some((_, bs)) if bs >= s => b,
            _ => Some((i, s)),
        });
    if let Some((i, value)) = best {
        if value >= params.theta {
            let (p, idx) = accumulated[i];
            return Ok((idx, Provenance::Similarity { source: p.key(), value }));
        }
    }
    *k += 1;
    Ok((
        *k - 1,
        Provenance::New {
            best_count,
            best_similarity: best.map(|b| b.1),
        },
    ))
}
