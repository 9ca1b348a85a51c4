//! Built-in keypoint correspondences: Harris corners, normalized patch
//! descriptors, ratio-tested mutual nearest neighbours.
//!
//! Externally supplied matches (`matches.bin`) always take precedence over
//! this detector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Dataset, KeypointMatchSet, PointPair, PosedImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointParams {
    pub harris_k: f64,
    /// Corners must exceed this fraction of the strongest response.
    pub relative_threshold: f64,
    pub max_corners: usize,
    /// Odd patch edge length for descriptors.
    pub patch: usize,
    pub ratio: f64,
    pub nms_radius: usize,
}

impl Default for KeypointParams {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            relative_threshold: 0.01,
            max_corners: 512,
            patch: 11,
            ratio: 0.75,
            nms_radius: 2,
        }
    }
}

/// Which view pairs get correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairSelection {
    #[default]
    All,
    /// Each view is paired with at most this many preceding views.
    Window(usize),
}

impl PairSelection {
    pub fn pairs(&self, views: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for b in 1..views {
            let lo = match *self {
                PairSelection::All => 0,
                PairSelection::Window(n) => b.saturating_sub(n),
            };
            for a in lo..b {
                out.push((a, b));
            }
        }
        out
    }
}

impl std::str::FromStr for PairSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Self::All);
        }
        match s.strip_prefix("window:").map(str::parse::<usize>) {
            Some(Ok(n)) if n >= 1 => Ok(Self::Window(n)),
            _ => Err(format!("expected `all` or `window:N` (N >= 1), got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamp-to-edge borders.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Harris corners on a luminance image, strongest first.
pub fn detect_corners(luma: &[f64], w: usize, h: usize, params: &KeypointParams) -> Vec<Corner> {
    let border = params.patch / 2 + 1;
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let at = |x: usize, y: usize| luma[y * w + x];
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let k = gaussian_kernel(1.0);
    let (sxx, syy, sxy) = (blur(&ixx, w, h, &k), blur(&iyy, w, h, &k), blur(&ixy, w, h, &k));
    let response: Vec<f64> = (0..w * h)
        .map(|i| {
            let tr = sxx[i] + syy[i];
            sxx[i] * syy[i] - sxy[i] * sxy[i] - params.harris_k * tr * tr
        })
        .collect();
    let max = response.iter().cloned().fold(0.0f64, f64::max);
    if max <= 1e-10 {
        return Vec::new();
    }
    let threshold = params.relative_threshold * max;
    let r = params.nms_radius as isize;
    let mut corners = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let i = y * w + x;
            let v = response[i];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    // Plateaus keep their first pixel in scan order.
                    if response[j] > v || (response[j] == v && j < i) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push(Corner { x, y, response: v });
            }
        }
    }
    corners.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    corners.truncate(params.max_corners);
    corners
}

/// Zero-mean, unit-norm patch; `None` for flat patches.
fn descriptor(luma: &[f64], w: usize, c: &Corner, patch: usize) -> Option<Vec<f64>> {
    let r = patch / 2;
    let mut d = Vec::with_capacity(patch * patch);
    for y in c.y - r..=c.y + r {
        for x in c.x - r..=c.x + r {
            d.push(luma[y * w + x]);
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest neighbour if it passes the ratio test.
fn ratio_nearest(query: &[f64], pool: &[Vec<f64>], ratio: f64) -> Option<usize> {
    let mut best = (f64::INFINITY, usize::MAX);
    let mut second = f64::INFINITY;
    for (j, d) in pool.iter().enumerate() {
        let dd = dist2(query, d);
        if dd < best.0 {
            second = best.0;
            best = (dd, j);
        } else if dd < second {
            second = dd;
        }
    }
    if best.1 == usize::MAX {
        return None;
    }
    // Compare Euclidean distances, not squared ones.
    if second.is_infinite() || best.0.sqrt() < ratio * second.sqrt() {
        Some(best.1)
    } else {
        None
    }
}

fn features(img: &PosedImage, params: &KeypointParams) -> (Vec<Corner>, Vec<Vec<f64>>) {
    let luma = img.luminance();
    let (w, h) = (img.width(), img.height());
    let mut corners = Vec::new();
    let mut descs = Vec::new();
    for c in detect_corners(&luma, w, h, params) {
        if let Some(d) = descriptor(&luma, w, &c, params.patch) {
            corners.push(c);
            descs.push(d);
        }
    }
    (corners, descs)
}

/// Matches two images: each accepted pair is the ratio-tested nearest
/// neighbour in both directions, so the result is symmetric under swapping
/// the views.
pub fn match_views(a: &PosedImage, b: &PosedImage, params: &KeypointParams) -> Vec<PointPair> {
    let (ca, da) = features(a, params);
    let (cb, db) = features(b, params);
    let back: Vec<Option<usize>> = db.iter().map(|d| ratio_nearest(d, &da, params.ratio)).collect();
    let mut out = Vec::new();
    for (i, d) in da.iter().enumerate() {
        if let Some(j) = ratio_nearest(d, &db, params.ratio) {
            if back[j] == Some(i) {
                out.push(PointPair {
                    a: [ca[i].x as f32 + 0.5, ca[i].y as f32 + 0.5],
                    b: [cb[j].x as f32 + 0.5, cb[j].y as f32 + 0.5],
                });
            }
        }
    }
    out
}

/// Matches for one view pair, oriented `a -> b`. Dataset-supplied matches
/// are returned verbatim.
pub fn detect_and_match_keypoints(
    ds: &Dataset,
    view_a: usize,
    view_b: usize,
    params: &KeypointParams,
) -> Result<Vec<PointPair>> {
    let n = ds.view_count();
    if view_a >= n || view_b >= n {
        return Err(Error::UnknownView(view_a.max(view_b)));
    }
    if let Some(pairs) = ds.matches.get(view_a, view_b) {
        return Ok(pairs);
    }
    Ok(match_views(&ds.views[view_a], &ds.views[view_b], params))
}

/// Correspondences for every selected pair, computing the missing ones in
/// parallel. The output does not depend on the thread count.
pub fn resolve_matches(
    ds: &Dataset,
    selection: PairSelection,
    params: &KeypointParams,
) -> Result<KeypointMatchSet> {
    let pairs = selection.pairs(ds.view_count());
    let computed: Vec<((usize, usize), Vec<PointPair>)> = pairs
        .par_iter()
        .map(|&(a, b)| detect_and_match_keypoints(ds, a, b, params).map(|m| ((a, b), m)))
        .collect::<Result<_>>()?;
    let mut set = KeypointMatchSet::new();
    for ((a, b), m) in computed {
        set.insert(a, b, m);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Camera;
    use image::{Rgb, RgbImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn posed(img: RgbImage) -> PosedImage {
        PosedImage {
            rgb: img,
            camera: Camera::look_at([0.0, 0.0, -1.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 1.0, 0.0, 0.0),
        }
    }

    /// Sum of random Gaussian blobs over a canvas larger than the image, so
    /// shifted crops stay textured and no two patches coincide.
    fn textured(seed: u64, w: u32, h: u32, shift: (u32, u32)) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cw, ch) = (w + 20, h + 20);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..90)
            .map(|_| {
                (
                    rng.random_range(0.0..cw as f64),
                    rng.random_range(0.0..ch as f64),
                    rng.random_range(1.5..4.0),
                    rng.random_range(-90.0..90.0),
                )
            })
            .collect();
        RgbImage::from_fn(w, h, |x, y| {
            let (px, py) = ((x + shift.0) as f64, (y + shift.1) as f64);
            let v: f64 = 128.0
                + blobs
                    .iter()
                    .map(|&(bx, by, s, amp)| {
                        amp * (-((px - bx).powi(2) + (py - by).powi(2)) / (2.0 * s * s)).exp()
                    })
                    .sum::<f64>();
            let v = v.round().clamp(0.0, 255.0) as u8;
            Rgb([v, v, v])
        })
    }

    #[test]
    fn identical_images_self_match() {
        let img = posed(textured(1, 96, 96, (10, 10)));
        let matches = match_views(&img, &img, &KeypointParams::default());
        let (corners, _) = features(&img, &KeypointParams::default());
        assert!(!matches.is_empty());
        assert_eq!(matches.len(), corners.len());
        assert!(matches.iter().all(|p| p.a == p.b));
    }

    #[test]
    fn constant_images_have_no_matches() {
        let img = posed(RgbImage::from_pixel(64, 64, Rgb([120, 30, 200])));
        assert!(match_views(&img, &img, &KeypointParams::default()).is_empty());
    }

    #[test]
    fn planar_shift_is_recovered() {
        // b is a shifted 5 px right of a: content at a(x) appears at b(x - 5).
        let a = posed(textured(7, 96, 96, (10, 10)));
        let b = posed(textured(7, 96, 96, (15, 10)));
        let m = match_views(&a, &b, &KeypointParams::default());
        assert!(m.len() >= 10, "only {} matches", m.len());
        let good = m
            .iter()
            .filter(|p| {
                let dx = p.b[0] - p.a[0] + 5.0;
                let dy = p.b[1] - p.a[1];
                (dx * dx + dy * dy).sqrt() <= 1.0
            })
            .count();
        assert!(good as f64 >= 0.9 * m.len() as f64, "{good}/{}", m.len());
    }

    #[test]
    fn symmetric_under_swap() {
        let a = posed(textured(3, 80, 80, (4, 6)));
        let b = posed(textured(3, 80, 80, (9, 2)));
        let p = KeypointParams::default();
        let ab = match_views(&a, &b, &p);
        let mut ba: Vec<PointPair> = match_views(&b, &a, &p)
            .into_iter()
            .map(|q| PointPair { a: q.b, b: q.a })
            .collect();
        let mut ab_sorted = ab.clone();
        let key = |q: &PointPair| (q.a[1].to_bits(), q.a[0].to_bits(), q.b[1].to_bits(), q.b[0].to_bits());
        ab_sorted.sort_by_key(key);
        ba.sort_by_key(key);
        assert_eq!(ab_sorted, ba);
    }

    #[test]
    fn pair_selection_parses() {
        assert_eq!("all".parse::<PairSelection>().unwrap(), PairSelection::All);
        assert_eq!("window:2".parse::<PairSelection>().unwrap(), PairSelection::Window(2));
        assert!("window:0".parse::<PairSelection>().is_err());
        assert_eq!(PairSelection::Window(1).pairs(3), vec![(0, 1), (1, 2)]);
        assert_eq!(PairSelection::All.pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
    }
}
