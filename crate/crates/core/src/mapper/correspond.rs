use std::collections::BTreeMap;

use crate::scene::{KeypointMatchSet, MaskKey, MaskRecord, PointPair};

/// Finds the prior mask receiving the most keypoint matches that start
/// inside `mask`.
///
/// A pair counts for a candidate when its endpoint in `mask`'s view lies in
/// `mask` and its endpoint in the candidate's view lies in the candidate.
/// Ties go to the lowest `(view, local)` key. `None` when there are no
/// candidates.
pub fn count_mask_correspondences(
    mask: &MaskRecord,
    prior_masks: &[&MaskRecord],
    matches: &KeypointMatchSet,
) -> Option<(MaskKey, usize)> {
    let mut by_view: BTreeMap<usize, Vec<&MaskRecord>> = BTreeMap::new();
    for m in prior_masks {
        by_view.entry(m.view).or_default().push(m);
    }
    let mut best: Option<(MaskKey, usize)> = None;
    for (view, cands) in by_view {
        let inside: Vec<PointPair> = if view == mask.view {
            Vec::new()
        } else {
            matches
                .get(mask.view, view)
                .unwrap_or_default()
                .into_iter()
                .filter(|p| mask.bitmap.contains_point(p.a[0] as f64, p.a[1] as f64))
                .collect()
        };
        for c in cands {
            let n = inside
                .iter()
                .filter(|p| c.bitmap.contains_point(p.b[0] as f64, p.b[1] as f64))
                .count();
            let key = c.key();
            best = match best {
                None => Some((key, n)),
                Some((bk, bn)) if n > bn || (n == bn && key < bk) => Some((key, n)),
                keep => keep,
            };
        }
    }
    best
}
