//! Segmentation and localization metrics against ground truth, and the
//! evaluation suite with its ablation switches.

mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BuildTimings, TrainedField};
use crate::ingest::GroundTruth;
use crate::query::{QueryEngine, QueryInput, QueryTimings, ViewSpec};
use crate::scene::{Bitmap, Dataset, GaussianCloud, MatchParams, QueryConfig, TrainConfig};
use crate::splat::RenderConfig;

pub use metrics::{adjusted_rand_index, localization_hit, mask_metrics};

/// Per-view object label maps, `None` for background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMaps {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Vec<Option<usize>>>,
}

impl From<&GroundTruth> for LabelMaps {
    fn from(t: &GroundTruth) -> Self {
        Self {
            width: t.width,
            height: t.height,
            labels: t.pixel_labels.clone(),
        }
    }
}

fn label_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("{t:04}.png"))
}

impl LabelMaps {
    pub fn object_mask(&self, view: usize, object: usize) -> Bitmap {
        let l = &self.labels[view];
        Bitmap::from_fn(self.width, self.height, |x, y| l[y * self.width + x] == Some(object))
    }

    pub fn visible(&self, view: usize, object: usize) -> bool {
        self.labels[view].contains(&Some(object))
    }

    /// One 16-bit grayscale PNG per view: 0 is background, `o + 1` is
    /// object `o`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, labels) in self.labels.iter().enumerate() {
            let data: Vec<u16> = labels
                .iter()
                .map(|l| l.map_or(0, |o| o as u16 + 1))
                .collect();
            let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(self.width as u32, self.height as u32, data).expect("buffer size");
            let p = label_path(dir, t);
            img.save(&p).map_err(|e| Error::format(&p, e.to_string()))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path, views: usize) -> Result<Self> {
        let mut labels = Vec::with_capacity(views);
        let mut size = None;
        for t in 0..views {
            let p = label_path(dir, t);
            let img = image::open(&p).map_err(|e| Error::format(&p, e.to_string()))?.into_luma16();
            let dims = (img.width() as usize, img.height() as usize);
            if *size.get_or_insert(dims) != dims {
                return Err(Error::format(&p, "label maps differ in size"));
            }
            labels.push(img.pixels().map(|p| p.0[0].checked_sub(1).map(usize::from)).collect());
        }
        let (width, height) = size.unwrap_or((0, 0));
        Ok(Self {
            width,
            height,
            labels,
        })
    }
}

/// One evaluation query as stored in `queries.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub name: String,
    pub embedding: Vec<f32>,
    /// Ground-truth object; queries without one are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<usize>,
    /// Views to evaluate; defaults to every view showing the object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views: Option<Vec<usize>>,
}

pub fn read_queries(path: &Path) -> Result<Vec<QuerySpec>> {
    crate::field::read_json(path)
}

pub fn write_queries(path: &Path, queries: &[QuerySpec]) -> Result<()> {
    crate::field::write_json(path, &queries)
}

/// One query for each object, using its embedding prototype.
pub fn prototype_queries(truth: &GroundTruth) -> Vec<QuerySpec> {
    truth
        .prototypes
        .iter()
        .enumerate()
        .map(|(o, p)| QuerySpec {
            name: format!("object-{o}"),
            embedding: p.clone(),
            object: Some(o),
            views: None,
        })
        .collect()
}

/// Pipeline switches for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub keypoints: bool,
    pub color: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            keypoints: true,
            color: true,
        }
    }
}

impl Ablation {
    pub fn apply(&self, params: &MatchParams) -> MatchParams {
        MatchParams {
            use_keypoints: params.use_keypoints && self.keypoints,
            alpha: if self.color { params.alpha } else { 0.0 },
            ..params.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub params: MatchParams,
    pub ablation: Ablation,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub query: QueryConfig,
    /// Run queries one at a time so per-query timings are undisturbed.
    pub serial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub query: String,
    pub object: usize,
    pub view: usize,
    pub iou: f64,
    pub accuracy: f64,
    pub hit: bool,
    pub targets: Vec<usize>,
    pub timings: QueryTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub query: String,
    pub object: usize,
    pub miou: f64,
    pub macc: f64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub per_query: Vec<QuerySummary>,
    /// Queries left out, with the reason.
    pub skipped: Vec<String>,
    pub miou: f64,
    pub macc: f64,
    /// Mean per-query wall clock over all stages, milliseconds.
    pub mtime_ms: f64,
    pub localization_accuracy: f64,
    pub k: usize,
    pub options: SuiteOptions,
    pub build: Option<BuildTimings>,
}

impl EvalReport {
    /// Copy with every timing field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.mtime_ms = 0.0;
        r.build = None;
        for e in &mut r.entries {
            e.timings = QueryTimings::default();
        }
        r
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { s / n as f64 }
}

/// Evaluates every query with ground truth on an already trained field.
pub fn evaluate_field(
    field: Arc<TrainedField>,
    queries: &[QuerySpec],
    truth: &LabelMaps,
    options: &SuiteOptions,
) -> Result<EvalReport> {
    let views = field.view_count();
    if truth.labels.len() != views
        || (truth.width, truth.height) != (field.sidecar.width, field.sidecar.height)
    {
        return Err(Error::contract("ground truth does not match the field's views"));
    }
    let engine = QueryEngine::new(field.clone());
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for q in queries {
        let Some(o) = q.object else {
            skipped.push(format!("{}: no ground-truth object", q.name));
            continue;
        };
        let vs: Vec<usize> = match &q.views {
            Some(v) => v.clone(),
            None => (0..views).filter(|&t| truth.visible(t, o)).collect(),
        };
        if vs.is_empty() {
            skipped.push(format!("{}: object {o} absent from the ground truth", q.name));
            continue;
        }
        for t in vs {
            if t >= views {
                return Err(Error::UnknownView(t));
            }
            jobs.push((q, o, t));
        }
    }
    let run = |&(q, o, t): &(&QuerySpec, usize, usize)| -> Result<EvalEntry> {
        let r = engine.query(&QueryInput {
            embedding: q.embedding.clone(),
            view: ViewSpec::Id(t),
            config: options.query.clone(),
        })?;
        let tm = truth.object_mask(t, o);
        let (iou, accuracy) = mask_metrics(&r.mask, &tm)?;
        let hit = tm.bounding_box().is_some_and(|b| localization_hit(&r, &b));
        Ok(EvalEntry {
            query: q.name.clone(),
            object: o,
            view: t,
            iou,
            accuracy,
            hit,
            targets: r.targets,
            timings: r.timings,
        })
    };
    let entries: Vec<EvalEntry> = if options.serial {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    };
    let mut per_query = Vec::new();
    for q in queries {
        let es: Vec<&EvalEntry> = entries.iter().filter(|e| e.query == q.name).collect();
        if let Some(first) = es.first() {
            per_query.push(QuerySummary {
                query: q.name.clone(),
                object: first.object,
                miou: mean(es.iter().map(|e| e.iou)),
                macc: mean(es.iter().map(|e| e.accuracy)),
                hit_rate: mean(es.iter().map(|e| e.hit as u8 as f64)),
            });
        }
    }
    Ok(EvalReport {
        miou: mean(entries.iter().map(|e| e.iou)),
        macc: mean(entries.iter().map(|e| e.accuracy)),
        mtime_ms: mean(
            entries
                .iter()
                .map(|e| e.timings.render_ms + e.timings.restore_ms + e.timings.mask_ms),
        ),
        localization_accuracy: mean(entries.iter().map(|e| e.hit as u8 as f64)),
        k: field.lattice().k,
        entries,
        per_query,
        skipped,
        options: options.clone(),
        build: None,
    })
}

/// Rebuilds the field under the suite's ablation switches (mapping, baking
/// and training), then evaluates it.
pub fn run_suite(
    ds: &Dataset,
    geometry: &GaussianCloud,
    queries: &[QuerySpec],
    truth: &LabelMaps,
    options: &SuiteOptions,
) -> Result<EvalReport> {
    let params = options.ablation.apply(&options.params);
    let (field, timings) = TrainedField::build(ds, geometry, &params, &options.train, &options.render)?;
    let mut report = evaluate_field(Arc::new(field), queries, truth, options)?;
    report.build = Some(timings);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_scene, SyntheticSceneSpec};

    #[test]
    fn label_maps_round_trip() {
        let s = generate_synthetic_scene(&SyntheticSceneSpec {
            objects: 3,
            views: 2,
            width: 40,
            height: 32,
            ..SyntheticSceneSpec::default()
        })
        .unwrap();
        let maps = LabelMaps::from(&s.truth);
        let dir = tempfile::tempdir().unwrap();
        maps.write_dir(dir.path()).unwrap();
        assert_eq!(LabelMaps::read_dir(dir.path(), 2).unwrap(), maps);
    }

    #[test]
    fn suite_on_small_scene() {
        let s = generate_synthetic_scene(&SyntheticSceneSpec {
            objects: 2,
            views: 3,
            width: 64,
            height: 64,
            ..SyntheticSceneSpec::default()
        })
        .unwrap();
        let mut queries = prototype_queries(&s.truth);
        queries.push(QuerySpec {
            name: "unlabeled".into(),
            embedding: queries[0].embedding.clone(),
            object: None,
            views: None,
        });
        let opts = SuiteOptions {
            train: TrainConfig {
                iterations: 300,
                ..TrainConfig::default()
            },
            serial: true,
            ..SuiteOptions::default()
        };
        let r = run_suite(&s.dataset, &s.cloud, &queries, &LabelMaps::from(&s.truth), &opts).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.k, 2);
        assert!(r.miou > 0.8, "miou {}", r.miou);
        assert_eq!(r.localization_accuracy, 1.0);
        let again = run_suite(&s.dataset, &s.cloud, &queries, &LabelMaps::from(&s.truth), &opts).unwrap();
        assert_eq!(r.without_timings(), again.without_timings());
    }

    #[test]
    fn empty_suite_is_valid() {
        let s = generate_synthetic_scene(&SyntheticSceneSpec {
            objects: 1,
            views: 2,
            width: 32,
            height: 32,
            ..SyntheticSceneSpec::default()
        })
        .unwrap();
        let opts = SuiteOptions {
            train: TrainConfig {
                iterations: 1,
                ..TrainConfig::default()
            },
            ..SuiteOptions::default()
        };
        let r = run_suite(&s.dataset, &s.cloud, &[], &LabelMaps::from(&s.truth), &opts).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!((r.miou, r.macc, r.localization_accuracy), (0.0, 0.0, 0.0));
    }
}
