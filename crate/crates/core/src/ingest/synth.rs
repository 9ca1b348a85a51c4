use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::compute_color_histogram;
use crate::error::{Error, Result};
use crate::scene::{
    Bitmap, Camera, CanonicalPhrase, Dataset, DatasetMeta, Gaussian, GaussianCloud,
    KeypointMatchSet, MaskKey, MaskRecord, PointPair, PosedImage,
};
use crate::splat::{RenderConfig, ViewWeights};

/// Recipe for a labeled synthetic scene: flat-colored discs of Gaussians
/// laid out on a grid and seen from an arc of cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub objects: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub embedding_dim: usize,
    /// Per-component std-dev of the noise added to prototypes before
    /// renormalizing.
    pub embedding_noise: f64,
    /// Fraction of ground-truth matches dropped at random.
    pub match_dropout: f64,
    /// Matches emitted per object per view pair, before dropout.
    pub matches_per_object: usize,
    pub orbit_radius: f64,
    /// Total horizontal arc covered by the cameras, degrees.
    pub orbit_arc_deg: f64,
    pub elevation_deg: f64,
    /// Smaller silhouettes are dropped, as a fraction of the image area.
    pub min_mask_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            objects: 4,
            views: 3,
            width: 128,
            height: 128,
            embedding_dim: 16,
            embedding_noise: 0.0,
            match_dropout: 0.0,
            matches_per_object: 48,
            orbit_radius: 6.0,
            orbit_arc_deg: 50.0,
            elevation_deg: 10.0,
            min_mask_frac: 0.001,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects < 1 {
            return Err(Error::domain("synthetic scene needs at least one object"));
        }
        if self.views < 2 {
            return Err(Error::domain("synthetic scene needs at least two views"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::domain("image must be at least 8x8"));
        }
        if self.embedding_dim < 1 {
            return Err(Error::domain("embedding_dim must be >= 1"));
        }
        if !(self.embedding_noise >= 0.0) {
            return Err(Error::domain("embedding_noise must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.match_dropout) {
            return Err(Error::domain("match_dropout must lie in [0, 1]"));
        }
        if !(self.orbit_radius > 2.0) {
            return Err(Error::domain("orbit_radius must exceed 2"));
        }
        Ok(())
    }
}

/// Labels recorded while generating a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mask_objects: BTreeMap<MaskKey, usize>,
    /// `pixel_labels[t][y * width + x]`, `None` for background.
    pub pixel_labels: Vec<Vec<Option<usize>>>,
    pub gaussian_labels: Vec<usize>,
    /// Unit-norm embedding prototype per object.
    pub prototypes: Vec<Vec<f32>>,
    pub width: usize,
    pub height: usize,
}

impl GroundTruth {
    pub fn object_mask(&self, view: usize, object: usize) -> Bitmap {
        let labels = &self.pixel_labels[view];
        Bitmap::from_fn(self.width, self.height, |x, y| {
            labels[y * self.width + x] == Some(object)
        })
    }

    pub fn visible_in(&self, view: usize, object: usize) -> bool {
        self.pixel_labels[view].contains(&Some(object))
    }

    pub fn object_count(&self) -> usize {
        self.prototypes.len()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub dataset: Dataset,
    pub cloud: GaussianCloud,
    pub truth: GroundTruth,
}

const BACKGROUND: [f64; 3] = [0.08, 0.08, 0.10];
const GT_COVERAGE: f64 = 0.5;

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_f32_unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Disc {
    center: [f64; 3],
    radius: f64,
    color: [f64; 3],
}

fn layout(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Vec<Disc> {
    let k = spec.objects;
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = k.div_ceil(cols);
    let cell = 3.4 / cols.max(rows) as f64;
    let hue0: f64 = rng.random_range(0.0..1.0);
    (0..k)
        .map(|o| {
            let (c, r) = (o % cols, o / cols);
            let x = (c as f64 - (cols as f64 - 1.0) / 2.0) * cell;
            let y = ((rows as f64 - 1.0) / 2.0 - r as f64) * cell;
            let z = rng.random_range(-0.1..0.1) * cell;
            let radius = 0.43 * cell * rng.random_range(0.95..1.05);
            let color = hsv(hue0 + o as f64 / k as f64, 0.75, rng.random_range(0.75..0.95));
            Disc {
                center: [x, y, z],
                radius,
                color,
            }
        })
        .collect()
}

fn cameras(spec: &SyntheticSceneSpec) -> Vec<Camera> {
    let f = 0.95 * (spec.width.min(spec.height) as f64 / 2.0) * spec.orbit_radius / 1.7;
    let el = spec.elevation_deg.to_radians();
    let arc = spec.orbit_arc_deg.to_radians();
    (0..spec.views)
        .map(|t| {
            let phi = -arc / 2.0 + arc * t as f64 / (spec.views - 1) as f64;
            let r = spec.orbit_radius;
            let eye = [r * phi.sin() * el.cos(), r * el.sin(), -r * phi.cos() * el.cos()];
            Camera::look_at(
                eye,
                [0.0; 3],
                [0.0, 1.0, 0.0],
                f,
                f,
                spec.width as f64 / 2.0,
                spec.height as f64 / 2.0,
            )
        })
        .collect()
}

/// Two hex-jittered layers of flat Gaussians filling each disc.
fn build_cloud(
    discs: &[Disc],
    spacing: f64,
    rng: &mut ChaCha8Rng,
) -> (GaussianCloud, Vec<usize>, Vec<[f64; 3]>, Vec<bool>) {
    let mut gaussians = Vec::new();
    let mut labels = Vec::new();
    let mut colors = Vec::new();
    let mut front = Vec::new();
    let row_h = spacing * 3f64.sqrt() / 2.0;
    for (o, d) in discs.iter().enumerate() {
        for layer in 0..2 {
            let (ox, oy) = if layer == 0 { (0.0, 0.0) } else { (spacing / 2.0, row_h / 3.0) };
            let dz = layer as f64 * 0.5 * spacing;
            let n = (d.radius / row_h).ceil() as i64 + 1;
            for j in -n..=n {
                let shift = if j.rem_euclid(2) == 1 { spacing / 2.0 } else { 0.0 };
                let m = (d.radius / spacing).ceil() as i64 + 1;
                for i in -m..=m {
                    let jx = rng.random_range(-0.15..0.15) * spacing;
                    let jy = rng.random_range(-0.15..0.15) * spacing;
                    let px = i as f64 * spacing + shift + ox + jx;
                    let py = j as f64 * row_h + oy + jy;
                    if px * px + py * py > d.radius * d.radius {
                        continue;
                    }
                    let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
                    let color: [f64; 3] = std::array::from_fn(|c| (d.color[c] + jitter[c]).clamp(0.0, 1.0));
                    gaussians.push(Gaussian {
                        position: [d.center[0] + px, d.center[1] + py, d.center[2] + dz],
                        scale: [0.6 * spacing, 0.6 * spacing, 0.15 * spacing],
                        rotation: [1.0, 0.0, 0.0, 0.0],
                        opacity: 0.98,
                        feature: [0.5; 3],
                    });
                    labels.push(o);
                    colors.push(color);
                    front.push(layer == 0);
                }
            }
        }
    }
    (GaussianCloud::new(gaussians), labels, colors, front)
}

/// Builds a fully labeled scene. Identical specs give identical scenes.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let discs = layout(spec, &mut rng);
    let cams = cameras(spec);
    let spacing = 0.8 * spec.orbit_radius / cams[0].fx;
    let (cloud, gaussian_labels, colors, front) = build_cloud(&discs, spacing, &mut rng);
    let rc = RenderConfig::default();
    let min_area = ((spec.min_mask_frac * (w * h) as f64).ceil() as usize).max(1);

    let mut views = Vec::with_capacity(spec.views);
    let mut pixel_labels = Vec::with_capacity(spec.views);
    for cam in &cams {
        let vw = ViewWeights::build(&cloud, cam, &rc, w, h)?;
        let rgb_f = vw.render(&colors)?;
        let mut labels = vec![None; w * h];
        let mut acc = vec![0.0; spec.objects];
        for (p, label) in labels.iter_mut().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut total = 0.0;
            for (id, wt) in vw.pixel(p) {
                acc[gaussian_labels[id]] += wt;
                total += wt;
            }
            if total >= GT_COVERAGE {
                // First maximum wins, so ties go to the lower object id.
                let best = (0..spec.objects).fold(0, |b, o| if acc[o] > acc[b] { o } else { b });
                *label = Some(best);
            }
        }
        let mut counts = vec![0usize; spec.objects];
        for l in labels.iter().flatten() {
            counts[*l] += 1;
        }
        for l in labels.iter_mut() {
            if matches!(l, Some(o) if counts[*o] < min_area) {
                *l = None;
            }
        }
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = y as usize * w + x as usize;
            let cov: f64 = vw.pixel(p).map(|(_, wt)| wt).sum();
            let px: [f64; 3] = std::array::from_fn(|c| rgb_f[p * 3 + c] + (1.0 - cov) * BACKGROUND[c]);
            Rgb(px.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        views.push(PosedImage {
            rgb,
            camera: cam.clone(),
        });
        pixel_labels.push(labels);
    }
    for o in 0..spec.objects {
        if !pixel_labels.iter().any(|l| l.contains(&Some(o))) {
            return Err(Error::Generation(format!("object {o} is not visible in any view")));
        }
    }

    let prototypes_f64: Vec<Vec<f64>> = (0..spec.objects)
        .map(|_| unit_gaussian(&mut rng, spec.embedding_dim))
        .collect();
    let prototypes: Vec<Vec<f32>> = prototypes_f64.iter().map(|p| to_f32_unit(p)).collect();

    let mut masks = Vec::with_capacity(spec.views);
    let mut mask_objects = BTreeMap::new();
    for (t, labels) in pixel_labels.iter().enumerate() {
        let mut present: Vec<usize> = (0..spec.objects).filter(|o| labels.contains(&Some(*o))).collect();
        present.shuffle(&mut rng);
        let mut view_masks = Vec::with_capacity(present.len());
        for (j, &o) in present.iter().enumerate() {
            let bitmap = Bitmap::from_fn(w, h, |x, y| labels[y * w + x] == Some(o));
            let embedding = if spec.embedding_noise > 0.0 {
                let noisy: Vec<f64> = prototypes_f64[o]
                    .iter()
                    .map(|v| v + spec.embedding_noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                to_f32_unit(&noisy)
            } else {
                prototypes[o].clone()
            };
            let mut rec = MaskRecord::new(t, j, bitmap, embedding);
            rec.histogram = Some(compute_color_histogram(&views[t], &rec.bitmap)?);
            mask_objects.insert(rec.key(), o);
            view_masks.push(rec);
        }
        masks.push(view_masks);
    }

    let projected: Vec<Vec<Option<[f64; 2]>>> = cams
        .iter()
        .zip(&pixel_labels)
        .map(|(cam, labels)| {
            cloud
                .gaussians
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let p = cam.project(&nalgebra::Vector3::from(g.position))?;
                    let (x, y) = (p[0].floor(), p[1].floor());
                    if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                        return None;
                    }
                    (labels[y as usize * w + x as usize] == Some(gaussian_labels[i])).then_some(p)
                })
                .collect()
        })
        .collect();
    let mut matches = KeypointMatchSet::new();
    for a in 0..spec.views {
        for b in a + 1..spec.views {
            let mut pairs = Vec::new();
            for o in 0..spec.objects {
                let mut cand: Vec<usize> = (0..cloud.len())
                    .filter(|&i| {
                        front[i]
                            && gaussian_labels[i] == o
                            && projected[a][i].is_some()
                            && projected[b][i].is_some()
                    })
                    .collect();
                cand.shuffle(&mut rng);
                cand.truncate(spec.matches_per_object);
                cand.sort_unstable();
                for i in cand {
                    if rng.random_bool(spec.match_dropout) {
                        continue;
                    }
                    let (pa, pb) = (projected[a][i].unwrap(), projected[b][i].unwrap());
                    pairs.push(PointPair {
                        a: [pa[0] as f32, pa[1] as f32],
                        b: [pb[0] as f32, pb[1] as f32],
                    });
                }
            }
            if !pairs.is_empty() {
                matches.insert(a, b, pairs);
            }
        }
    }

    let canonical = ["object", "stuff", "texture"]
        .iter()
        .map(|name| CanonicalPhrase {
            name: name.to_string(),
            embedding: to_f32_unit(&unit_gaussian(&mut rng, spec.embedding_dim)),
        })
        .collect();

    let dataset = Dataset {
        meta: DatasetMeta {
            embedding_dim: spec.embedding_dim,
            width: w,
            height: h,
            view_count: spec.views,
            source: "synthetic".to_string(),
        },
        views,
        masks,
        matches,
        canonical,
    };
    Ok(SyntheticScene {
        dataset,
        cloud,
        truth: GroundTruth {
            mask_objects,
            pixel_labels,
            gaussian_labels,
            prototypes,
            width: w,
            height: h,
        },
    })
}
