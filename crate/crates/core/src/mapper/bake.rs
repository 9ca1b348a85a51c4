use rayon::prelude::*;

use super::MappingResult;
use crate::error::{Error, Result};
use crate::scene::{Bitmap, Dataset, FeatureMap};

/// Training target for one view: lattice centers painted through the
/// masks, plus the set of pixels any mask covers.
#[derive(Debug, Clone, PartialEq)]
pub struct BakedView {
    pub target: FeatureMap,
    pub coverage: Bitmap,
}

/// Paints every mask with its object's lattice center. Where masks
/// overlap the smallest one wins (lower local index on equal area);
/// uncovered pixels stay at zero and out of coverage.
pub fn bake_feature_maps(ds: &Dataset, mapping: &MappingResult) -> Result<Vec<BakedView>> {
    let (w, h) = (ds.width(), ds.height());
    ds.masks
        .par_iter()
        .enumerate()
        .map(|(t, masks)| {
            let mut order: Vec<_> = masks.iter().collect();
            order.sort_by_key(|m| (m.area, m.local));
            let mut target = FeatureMap::zeros(w, h, t);
            let mut coverage = Bitmap::new(w, h);
            for m in order {
                let idx = mapping.idx(m.key()).ok_or_else(|| {
                    Error::contract(format!("mask ({}, {}) missing from mapping", m.view, m.local))
                })?;
                let center = mapping
                    .lattice
                    .cells
                    .get(idx)
                    .ok_or_else(|| Error::contract(format!("object {idx} has no lattice cell")))?
                    .center;
                for y in 0..h {
                    for x in 0..w {
                        if m.bitmap.get(x, y) && !coverage.get(x, y) {
                            coverage.set(x, y, true);
                            target.set(x, y, center);
                        }
                    }
                }
            }
            Ok(BakedView { target, coverage })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_scene, SyntheticSceneSpec};
    use crate::mapper::cross_view_grid_mapping;
    use crate::scene::{MaskRecord, MatchParams};

    #[test]
    fn smallest_mask_wins_and_uncovered_is_null() {
        let mut ds = generate_synthetic_scene(&SyntheticSceneSpec {
            objects: 2,
            views: 2,
            width: 64,
            height: 64,
            ..SyntheticSceneSpec::default()
        })
        .unwrap()
        .dataset;
        // One view with a large mask and a small mask nested inside it.
        let big = Bitmap::from_fn(64, 64, |x, y| x < 40 && y < 40);
        let small = Bitmap::from_fn(64, 64, |x, y| (10..20).contains(&x) && (10..20).contains(&y));
        let dim = ds.meta.embedding_dim;
        let e = |i: usize| (0..dim).map(|j| if j == i { 1.0 } else { 0.0 }).collect();
        ds.masks = vec![
            vec![MaskRecord::new(0, 0, big, e(0)), MaskRecord::new(0, 1, small, e(1))],
            vec![],
        ];
        ds.ensure_histograms().unwrap();
        let mapping = cross_view_grid_mapping(&ds, &MatchParams::default()).unwrap();
        let baked = bake_feature_maps(&ds, &mapping).unwrap();
        let c = |o: usize| mapping.lattice.cells[o].center;
        assert_eq!(baked[0].target.get(15, 15), c(1));
        assert_eq!(baked[0].target.get(30, 30), c(0));
        assert_eq!(baked[0].target.get(50, 50), [0.0; 3]);
        assert!(!baked[0].coverage.get(50, 50));
        assert_eq!(baked[0].coverage.count(), 1600);
        assert!(baked[1].coverage.is_empty());
    }

    #[test]
    fn synthetic_bake_matches_masks() {
        let s = generate_synthetic_scene(&SyntheticSceneSpec {
            objects: 3,
            views: 3,
            width: 48,
            height: 48,
            ..SyntheticSceneSpec::default()
        })
        .unwrap();
        let mapping = cross_view_grid_mapping(&s.dataset, &MatchParams::default()).unwrap();
        let baked = bake_feature_maps(&s.dataset, &mapping).unwrap();
        for m in s.dataset.all_masks() {
            let c = mapping.lattice.cells[mapping.idx(m.key()).unwrap()].center;
            for y in 0..48 {
                for x in 0..48 {
                    if m.bitmap.get(x, y) {
                        assert_eq!(baked[m.view].target.get(x, y), c);
                    }
                }
            }
        }
        assert_eq!(baked, bake_feature_maps(&s.dataset, &mapping).unwrap());
    }
}
