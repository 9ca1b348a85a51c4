use std::fmt;

use serde::{Deserialize, Serialize};

use super::Dataset;

/// One broken invariant, located by view and mask where applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub view: Option<usize>,
    pub local: Option<usize>,
    pub message: String,
}

impl Violation {
    fn global(message: impl Into<String>) -> Self {
        Self {
            view: None,
            local: None,
            message: message.into(),
        }
    }

    fn view(view: usize, message: impl Into<String>) -> Self {
        Self {
            view: Some(view),
            local: None,
            message: message.into(),
        }
    }

    fn mask(view: usize, local: usize, message: impl Into<String>) -> Self {
        Self {
            view: Some(view),
            local: Some(local),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.view, self.local) {
            (Some(v), Some(l)) => write!(f, "view {v} mask {l}: {}", self.message),
            (Some(v), None) => write!(f, "view {v}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Checks every dataset invariant. An empty report means the dataset is
/// valid.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let meta = &ds.meta;
    let (w, h, d) = (meta.width, meta.height, meta.embedding_dim);

    if d < 1 {
        out.push(Violation::global("embedding dimension must be >= 1"));
    }
    if ds.views.is_empty() {
        out.push(Violation::global("dataset has no views"));
    }
    if meta.view_count != ds.views.len() {
        out.push(Violation::global(format!(
            "meta declares {} views, dataset has {}",
            meta.view_count,
            ds.views.len()
        )));
    }
    if ds.masks.len() != ds.views.len() {
        out.push(Violation::global(format!(
            "{} mask lists for {} views",
            ds.masks.len(),
            ds.views.len()
        )));
    }

    for (t, view) in ds.views.iter().enumerate() {
        if view.width() != w || view.height() != h {
            out.push(Violation::view(
                t,
                format!(
                    "image is {}x{}, dataset is {w}x{h}",
                    view.width(),
                    view.height()
                ),
            ));
        }
        for p in view.camera.problems() {
            out.push(Violation::view(t, p));
        }
    }

    for (t, masks) in ds.masks.iter().enumerate() {
        let mut prev_local: Option<usize> = None;
        for m in masks {
            let v = |msg: String| Violation::mask(m.view, m.local, msg);
            if m.view != t {
                out.push(v(format!("listed under view {t} but records view {}", m.view)));
            }
            if m.view >= ds.views.len() {
                out.push(v("view index out of range".into()));
            }
            if let Some(p) = prev_local {
                if m.local <= p {
                    out.push(v(format!("local index not increasing after {p}")));
                }
            }
            prev_local = Some(m.local);
            if m.bitmap.width() != w || m.bitmap.height() != h {
                out.push(v(format!(
                    "bitmap is {}x{}, dataset is {w}x{h}",
                    m.bitmap.width(),
                    m.bitmap.height()
                )));
            }
            let count = m.bitmap.count();
            if m.area != count {
                out.push(v(format!("area {} != bitmap count {count}", m.area)));
            }
            if count < 1 {
                out.push(v("zero-area mask".into()));
            }
            if m.embedding.len() != d {
                out.push(v(format!(
                    "embedding length {} != dimension {d}",
                    m.embedding.len()
                )));
            }
            if m.embedding.iter().any(|x| !x.is_finite()) {
                out.push(v("non-finite embedding".into()));
            } else if m.embedding.iter().all(|&x| x == 0.0) {
                out.push(v("zero-norm embedding".into()));
            }
            if let Some(hist) = &m.histogram {
                if !hist.is_normalized() {
                    out.push(v(format!("histogram not normalized (sum {})", hist.sum())));
                }
            }
        }
    }

    for (i, c) in ds.canonical.iter().enumerate() {
        if c.embedding.len() != d {
            out.push(Violation::global(format!(
                "canonical phrase {i} ({}) has length {} != {d}",
                c.name,
                c.embedding.len()
            )));
        } else if c.embedding.iter().all(|&x| x == 0.0) || c.embedding.iter().any(|x| !x.is_finite()) {
            out.push(Violation::global(format!("canonical phrase {i} ({}) is degenerate", c.name)));
        }
    }

    for (&(a, b), pairs) in ds.matches.iter() {
        if a >= ds.views.len() || b >= ds.views.len() {
            out.push(Violation::global(format!("matches reference views ({a}, {b})")));
            continue;
        }
        let inside = |p: [f32; 2]| {
            p[0] >= 0.0 && p[1] >= 0.0 && (p[0] as f64) < w as f64 && (p[1] as f64) < h as f64
        };
        let bad = pairs.iter().filter(|p| !inside(p.a) || !inside(p.b)).count();
        if bad > 0 {
            out.push(Violation::view(a, format!("{bad} matches with view {b} fall outside the image")));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_scene, SyntheticSceneSpec};
    use crate::scene::Bitmap;

    fn small() -> Dataset {
        let spec = SyntheticSceneSpec {
            objects: 2,
            views: 2,
            width: 48,
            height: 48,
            ..SyntheticSceneSpec::default()
        };
        generate_synthetic_scene(&spec).unwrap().dataset
    }

    #[test]
    fn synthetic_dataset_is_valid() {
        let ds = small();
        assert_eq!(validate_dataset(&ds), vec![]);
    }

    #[test]
    fn zero_area_mask_is_reported_once() {
        let mut ds = small();
        let m = &mut ds.masks[1][0];
        m.bitmap = Bitmap::new(48, 48);
        m.area = 0;
        let (view, local) = (m.view, m.local);
        let report = validate_dataset(&ds);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].view, Some(view));
        assert_eq!(report[0].local, Some(local));
    }

    #[test]
    fn embedding_length_mismatch_names_the_mask() {
        let mut ds = small();
        ds.masks[0][1].embedding.push(0.5);
        let report = validate_dataset(&ds);
        assert_eq!(report.len(), 1);
        assert_eq!((report[0].view, report[0].local), (Some(0), Some(ds.masks[0][1].local)));
        assert!(report[0].message.contains("embedding length"));
    }

    #[test]
    fn pure_over_repeated_calls() {
        let mut ds = small();
        ds.masks[0][0].area += 1;
        assert_eq!(validate_dataset(&ds), validate_dataset(&ds));
    }
}
