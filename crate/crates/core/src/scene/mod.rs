//! Domain types shared by every pipeline stage, plus the on-disk dataset
//! layout.
//!
//! All types are immutable once built except the per-Gaussian features of
//! [`GaussianCloud`], which only the trainer mutates.

mod camera;
mod feature;
mod gaussians;
pub mod io;
mod params;
mod validate;

use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use camera::Camera;
pub use feature::{decode_feature, encode_feature, FEATURE_SCALE};
pub use gaussians::{Gaussian, GaussianCloud};
pub use params::{MatchParams, QueryConfig, ScoreAggregation, TrainConfig};
pub use validate::{validate_dataset, Violation};

/// Number of bins per RGB channel in a [`ColorHistogram`].
pub const HIST_BINS_PER_CHANNEL: usize = 8;
/// Total joint-histogram bin count (8 x 8 x 8).
pub const HIST_BINS: usize = HIST_BINS_PER_CHANNEL * HIST_BINS_PER_CHANNEL * HIST_BINS_PER_CHANNEL;

/// Dense boolean image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bitmap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::contract(format!(
                "bitmap of {}x{} needs {} bits, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Whether the pixel containing sub-pixel coordinate `(x, y)` is set.
    /// Out-of-bounds coordinates are never set.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let (px, py) = (x.floor() as usize, y.floor() as usize);
        px < self.width && py < self.height && self.get(px, py)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn intersection_count(&self, other: &Bitmap) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_with(&mut self, other: &Bitmap) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)`, `None` when empty.
    pub fn bounding_box(&self) -> Option<PixelRect> {
        let mut rect: Option<PixelRect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    rect = Some(match rect {
                        None => PixelRect {
                            x0: x,
                            y0: y,
                            x1: x,
                            y1: y,
                        },
                        Some(r) => PixelRect {
                            x0: r.x0.min(x),
                            y0: r.y0.min(y),
                            x1: r.x1.max(x),
                            y1: r.y1.max(y),
                        },
                    });
                }
            }
        }
        rect
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// 8x8x8 joint RGB histogram, L1-normalized.
///
/// Bins are stored as `f32` so the in-memory value matches `histograms.bin`
/// byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    bins: Vec<f32>,
}

impl ColorHistogram {
    /// Tolerance on the bin sum. `f32` bins cannot hold 1 to better than
    /// a few ulps once several bins are populated.
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn from_bins(bins: Vec<f32>) -> Result<Self> {
        if bins.len() != HIST_BINS {
            return Err(Error::domain(format!(
                "histogram needs {} bins, got {}",
                HIST_BINS,
                bins.len()
            )));
        }
        Ok(Self { bins })
    }

    /// Bin index of an 8-bit RGB triple.
    #[inline]
    pub fn bin_of(rgb: [u8; 3]) -> usize {
        let q = |c: u8| (c as usize) >> 5;
        (q(rgb[0]) * HIST_BINS_PER_CHANNEL + q(rgb[1])) * HIST_BINS_PER_CHANNEL + q(rgb[2])
    }

    pub fn bins(&self) -> &[f32] {
        &self.bins
    }

    pub fn sum(&self) -> f64 {
        self.bins.iter().map(|&b| b as f64).sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.bins.iter().all(|&b| b >= 0.0 && b.is_finite())
            && (self.sum() - 1.0).abs() <= Self::SUM_TOLERANCE
    }
}

/// One segmentation mask in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub view: usize,
    pub local: usize,
    pub bitmap: Bitmap,
    pub area: usize,
    pub embedding: Vec<f32>,
    pub histogram: Option<ColorHistogram>,
    /// Object index, set once cross-view mapping has run.
    pub idx: Option<usize>,
}

impl MaskRecord {
    pub fn new(view: usize, local: usize, bitmap: Bitmap, embedding: Vec<f32>) -> Self {
        let area = bitmap.count();
        Self {
            view,
            local,
            bitmap,
            area,
            embedding,
            histogram: None,
            idx: None,
        }
    }

    /// Ordering key used for every deterministic tie-break.
    pub fn key(&self) -> MaskKey {
        MaskKey {
            view: self.view,
            local: self.local,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaskKey {
    pub view: usize,
    pub local: usize,
}

/// An input image and its pose. Pixels are kept as 8-bit RGB so the PNG
/// round trip is exact; [`PosedImage::pixel`] exposes them in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub rgb: RgbImage,
    pub camera: Camera,
}

impl PosedImage {
    pub fn width(&self) -> usize {
        self.rgb.width() as usize
    }

    pub fn height(&self) -> usize {
        self.rgb.height() as usize
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.rgb.get_pixel(x as u32, y as u32).0;
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }

    pub fn luminance(&self) -> Vec<f64> {
        self.rgb
            .pixels()
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect()
    }
}

/// One pixel correspondence between two views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub a: [f32; 2],
    pub b: [f32; 2],
}

/// Keypoint correspondences keyed by ordered view pair `(a, b)` with `a < b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointMatchSet {
    pairs: BTreeMap<(usize, usize), Vec<PointPair>>,
}

impl KeypointMatchSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts matches for `(view_a, view_b)`, normalizing so the smaller
    /// view index comes first. Exact duplicate pairs are dropped.
    pub fn insert(&mut self, view_a: usize, view_b: usize, pairs: Vec<PointPair>) {
        let (key, pairs) = if view_a <= view_b {
            ((view_a, view_b), pairs)
        } else {
            (
                (view_b, view_a),
                pairs
                    .into_iter()
                    .map(|p| PointPair { a: p.b, b: p.a })
                    .collect(),
            )
        };
        let entry = self.pairs.entry(key).or_default();
        for p in pairs {
            if !entry.contains(&p) {
                entry.push(p);
            }
        }
    }

    /// Matches oriented so `.a` lies in `view_a` and `.b` in `view_b`.
    pub fn get(&self, view_a: usize, view_b: usize) -> Option<Vec<PointPair>> {
        if view_a <= view_b {
            self.pairs.get(&(view_a, view_b)).cloned()
        } else {
            self.pairs.get(&(view_b, view_a)).map(|v| {
                v.iter().map(|p| PointPair { a: p.b, b: p.a }).collect()
            })
        }
    }

    pub fn contains(&self, view_a: usize, view_b: usize) -> bool {
        self.pairs.contains_key(&(view_a.min(view_b), view_a.max(view_b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<PointPair>)> {
        self.pairs.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub embedding_dim: usize,
    pub width: usize,
    pub height: usize,
    pub view_count: usize,
    pub source: String,
}

/// A named canonical phrase embedding used as the relevancy baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPhrase {
    pub name: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub views: Vec<PosedImage>,
    /// `masks[t]` holds the masks of view `t`, ordered by local index.
    pub masks: Vec<Vec<MaskRecord>>,
    pub matches: KeypointMatchSet,
    pub canonical: Vec<CanonicalPhrase>,
}

impl Dataset {
    pub fn width(&self) -> usize {
        self.meta.width
    }

    pub fn height(&self) -> usize {
        self.meta.height
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn mask_count(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }

    pub fn all_masks(&self) -> impl Iterator<Item = &MaskRecord> {
        self.masks.iter().flatten()
    }

    pub fn mask(&self, key: MaskKey) -> Option<&MaskRecord> {
        self.masks
            .get(key.view)?
            .iter()
            .find(|m| m.local == key.local)
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn canonical_embeddings(&self) -> Vec<Vec<f32>> {
        self.canonical.iter().map(|c| c.embedding.clone()).collect()
    }

    /// Fills any missing mask histograms from the view images.
    pub fn ensure_histograms(&mut self) -> Result<()> {
        let views = &self.views;
        for masks in &mut self.masks {
            for m in masks.iter_mut() {
                if m.histogram.is_none() {
                    let img = views
                        .get(m.view)
                        .ok_or_else(|| Error::domain(format!("mask references view {}", m.view)))?;
                    m.histogram = Some(crate::ingest::compute_color_histogram(img, &m.bitmap)?);
                }
            }
        }
        Ok(())
    }
}

/// Rendered low-dimensional feature image, values in `[0, 1]`, row-major
/// with three interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub view: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, view: usize) -> Self {
        Self {
            width,
            height,
            view,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&v);
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// The map scaled to 8-bit RGB, for visualization.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize);
            let c = |f: f64| (f.clamp(0.0, 1.0) * FEATURE_SCALE).round() as u8;
            image::Rgb([c(v[0]), c(v[1]), c(v[2])])
        })
    }

    /// [`Self::to_rgb8`] encoded as PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Numeric(format!("png encoding failed: {e}")))?;
        Ok(out.into_inner())
    }
}
