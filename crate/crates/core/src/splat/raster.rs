use rayon::prelude::*;

use super::{project_cloud, RenderConfig, Splat2D};
use crate::error::{Error, Result};
use crate::scene::{Camera, FeatureMap, GaussianCloud};

/// One depth-ordered contribution to a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeEntry {
    pub depth: f64,
    pub alpha: f64,
    pub feature: [f64; 3],
}

/// Front-to-back blending of one pixel's contributions.
///
/// Each alpha is clipped to `[0, max_alpha]`; entries below `alpha_cutoff`
/// are skipped and blending stops once transmittance drops below the floor.
pub fn composite_pixel(entries: &[CompositeEntry], cfg: &RenderConfig) -> Result<[f64; 3]> {
    if let Some(w) = entries.windows(2).find(|w| w[1].depth < w[0].depth) {
        return Err(Error::contract(format!(
            "splats not sorted front to back (depth {} after {})",
            w[1].depth, w[0].depth
        )));
    }
    let mut out = [0.0; 3];
    blend(
        entries.iter().enumerate().map(|(i, e)| (i, e.alpha)),
        cfg,
        |i, w| {
            for c in 0..3 {
                out[c] += w * entries[i].feature[c];
            }
        },
    );
    Ok(out)
}

/// Core of every compositing path: calls `sink(id, weight)` with the blend
/// weight `a_i * prod_{j<i} (1 - a_j)` of each contributing entry.
#[inline]
fn blend(
    alphas: impl Iterator<Item = (usize, f64)>,
    cfg: &RenderConfig,
    mut sink: impl FnMut(usize, f64),
) {
    let mut transmittance = 1.0;
    for (id, a) in alphas {
        let a = a.clamp(0.0, cfg.max_alpha);
        if a < cfg.alpha_cutoff {
            continue;
        }
        sink(id, a * transmittance);
        transmittance *= 1.0 - a;
        if transmittance < cfg.transmittance_floor {
            break;
        }
    }
}

struct TileGrid {
    size: usize,
    nx: usize,
    ny: usize,
    width: usize,
    height: usize,
}

impl TileGrid {
    fn new(width: usize, height: usize, size: usize) -> Self {
        Self {
            size,
            nx: width.div_ceil(size),
            ny: height.div_ceil(size),
            width,
            height,
        }
    }

    fn count(&self) -> usize {
        self.nx * self.ny
    }

    /// Pixel rectangle `(x0, y0, x1, y1)`, exclusive upper bounds.
    fn rect(&self, tile: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.nx, tile / self.nx);
        let (x0, y0) = (tx * self.size, ty * self.size);
        (x0, y0, (x0 + self.size).min(self.width), (y0 + self.size).min(self.height))
    }

    /// Per-tile splat index lists, each in global depth order.
    fn bin(&self, splats: &[Splat2D]) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.count()];
        if self.count() == 0 {
            return lists;
        }
        let s = self.size as f64;
        for (i, sp) in splats.iter().enumerate() {
            let (lo_x, hi_x) = (sp.mean2d[0] - sp.radius, sp.mean2d[0] + sp.radius);
            let (lo_y, hi_y) = (sp.mean2d[1] - sp.radius, sp.mean2d[1] + sp.radius);
            if hi_x < 0.0 || hi_y < 0.0 || lo_x >= self.width as f64 || lo_y >= self.height as f64 {
                continue;
            }
            let tx0 = (lo_x / s).floor().max(0.0) as usize;
            let ty0 = (lo_y / s).floor().max(0.0) as usize;
            let tx1 = ((hi_x / s).floor() as usize).min(self.nx - 1);
            let ty1 = ((hi_y / s).floor() as usize).min(self.ny - 1);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    lists[ty * self.nx + tx].push(i as u32);
                }
            }
        }
        lists
    }
}

#[inline]
fn pixel_weights(
    list: &[u32],
    splats: &[Splat2D],
    x: usize,
    y: usize,
    cfg: &RenderConfig,
    sink: impl FnMut(usize, f64),
) {
    let p = [x as f64 + 0.5, y as f64 + 0.5];
    blend(
        list.iter().map(|&k| {
            let s = &splats[k as usize];
            (s.gaussian_id, s.alpha_at(p))
        }),
        cfg,
        sink,
    );
}

/// Renders the feature image of `cloud` seen from `cam`. Tiles are
/// processed in parallel; the result does not depend on the thread count.
pub fn render_feature_map(
    cloud: &GaussianCloud,
    cam: &Camera,
    cfg: &RenderConfig,
    width: usize,
    height: usize,
    view: usize,
) -> Result<FeatureMap> {
    cfg.validate()?;
    let splats = project_cloud(cloud, cam, cfg, width, height)?;
    let grid = TileGrid::new(width, height, cfg.tile);
    let lists = grid.bin(&splats);
    let tiles: Vec<Vec<[f64; 3]>> = (0..grid.count())
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = grid.rect(t);
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let mut f = [0.0; 3];
                    pixel_weights(&lists[t], &splats, x, y, cfg, |id, w| {
                        let g = &cloud.gaussians[id].feature;
                        f[0] += w * g[0];
                        f[1] += w * g[1];
                        f[2] += w * g[2];
                    });
                    out.push(f);
                }
            }
            out
        })
        .collect();
    let mut map = FeatureMap::zeros(width, height, view);
    for (t, values) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, _) = grid.rect(t);
        let tw = x1 - x0;
        for (i, v) in values.into_iter().enumerate() {
            map.set(x0 + i % tw, y0 + i / tw, v);
        }
    }
    Ok(map)
}

/// Per-pixel blend weights of one view, in compressed sparse rows.
///
/// Because blending is linear in the features, these weights fully
/// describe the view for fixed geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewWeights {
    pub width: usize,
    pub height: usize,
    gaussian_count: usize,
    offsets: Vec<usize>,
    ids: Vec<u32>,
    weights: Vec<f64>,
}

impl ViewWeights {
    pub fn build(
        cloud: &GaussianCloud,
        cam: &Camera,
        cfg: &RenderConfig,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let splats = project_cloud(cloud, cam, cfg, width, height)?;
        let grid = TileGrid::new(width, height, cfg.tile);
        let lists = grid.bin(&splats);
        // Per tile: per-pixel entry counts plus flattened entries.
        let tiles: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = (0..grid.count())
            .into_par_iter()
            .map(|t| {
                let (x0, y0, x1, y1) = grid.rect(t);
                let mut counts = Vec::with_capacity((x1 - x0) * (y1 - y0));
                let mut ids = Vec::new();
                let mut ws = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        let before = ids.len();
                        pixel_weights(&lists[t], &splats, x, y, cfg, |id, w| {
                            ids.push(id as u32);
                            ws.push(w);
                        });
                        counts.push(ids.len() - before);
                    }
                }
                (counts, ids, ws)
            })
            .collect();
        // Tile-local starts for each pixel, then stitch in row-major order.
        let starts: Vec<Vec<usize>> = tiles
            .iter()
            .map(|(counts, _, _)| {
                let mut acc = 0;
                counts
                    .iter()
                    .map(|c| {
                        let s = acc;
                        acc += c;
                        s
                    })
                    .collect()
            })
            .collect();
        let total: usize = tiles.iter().map(|t| t.1.len()).sum();
        let mut offsets = Vec::with_capacity(width * height + 1);
        let mut ids = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        offsets.push(0);
        for y in 0..height {
            for x in 0..width {
                let t = (y / grid.size) * grid.nx + x / grid.size;
                let (x0, y0, x1, _) = grid.rect(t);
                let local = (y - y0) * (x1 - x0) + (x - x0);
                let (counts, tids, tws) = &tiles[t];
                let s = starts[t][local];
                let e = s + counts[local];
                ids.extend_from_slice(&tids[s..e]);
                weights.extend_from_slice(&tws[s..e]);
                offsets.push(ids.len());
            }
        }
        Ok(Self {
            width,
            height,
            gaussian_count: cloud.len(),
            offsets,
            ids,
            weights,
        })
    }

    pub fn entries(&self) -> usize {
        self.ids.len()
    }

    /// `(gaussian id, weight)` pairs of pixel `p` in blend order.
    pub fn pixel(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[p], self.offsets[p + 1]);
        self.ids[s..e]
            .iter()
            .zip(&self.weights[s..e])
            .map(|(&i, &w)| (i as usize, w))
    }

    /// Sum of blend weights per pixel, i.e. accumulated opacity.
    pub fn coverage(&self) -> Vec<f64> {
        (0..self.width * self.height)
            .map(|p| self.pixel(p).map(|(_, w)| w).sum())
            .collect()
    }

    fn check_features(&self, n: usize) -> Result<()> {
        if n != self.gaussian_count {
            return Err(Error::contract(format!(
                "weights were built for {} gaussians, got {n}",
                self.gaussian_count
            )));
        }
        Ok(())
    }

    /// Forward pass: interleaved 3-channel pixel values.
    pub fn render(&self, features: &[[f64; 3]]) -> Result<Vec<f64>> {
        self.check_features(features.len())?;
        let mut out = vec![0.0; self.width * self.height * 3];
        out.par_chunks_mut(3).enumerate().for_each(|(p, px)| {
            for (id, w) in self.pixel(p) {
                let f = &features[id];
                px[0] += w * f[0];
                px[1] += w * f[1];
                px[2] += w * f[2];
            }
        });
        Ok(out)
    }

    pub fn render_map(&self, features: &[[f64; 3]], view: usize) -> Result<FeatureMap> {
        Ok(FeatureMap {
            width: self.width,
            height: self.height,
            view,
            data: self.render(features)?,
        })
    }

    /// Transpose of [`ViewWeights::render`]: per-Gaussian feature gradients
    /// from per-pixel gradients. Accumulates in pixel order.
    pub fn backward(&self, pixel_grads: &[f64]) -> Result<Vec<[f64; 3]>> {
        if pixel_grads.len() != self.width * self.height * 3 {
            return Err(Error::contract(format!(
                "pixel gradient has {} values, view needs {}",
                pixel_grads.len(),
                self.width * self.height * 3
            )));
        }
        let mut grads = vec![[0.0; 3]; self.gaussian_count];
        for p in 0..self.width * self.height {
            let g = &pixel_grads[p * 3..p * 3 + 3];
            if g == [0.0; 3] {
                continue;
            }
            for (id, w) in self.pixel(p) {
                let out = &mut grads[id];
                out[0] += w * g[0];
                out[1] += w * g[1];
                out[2] += w * g[2];
            }
        }
        Ok(grads)
    }
}

/// Gradient of a pixel-space loss with respect to every Gaussian feature.
/// Geometry receives no gradient.
pub fn backward_features(
    cloud: &GaussianCloud,
    cam: &Camera,
    cfg: &RenderConfig,
    pixel_grads: &[f64],
    width: usize,
    height: usize,
) -> Result<Vec<[f64; 3]>> {
    ViewWeights::build(cloud, cam, cfg, width, height)?.backward(pixel_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;
    use proptest::prelude::*;

    fn entry(depth: f64, alpha: f64, feature: [f64; 3]) -> CompositeEntry {
        CompositeEntry {
            depth,
            alpha,
            feature,
        }
    }

    fn identity_cam(w: usize, h: usize) -> Camera {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Camera {
            fx: 50.0,
            fy: 50.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            world_to_camera: m,
            near: 0.1,
        }
    }

    #[test]
    fn single_opaque_bound() {
        let f = composite_pixel(&[entry(1.0, 0.99, [1.0, 0.0, 0.0])], &RenderConfig::default()).unwrap();
        assert_eq!(f, [0.99, 0.0, 0.0]);
    }

    #[test]
    fn two_half_splats_by_hand() {
        let f = composite_pixel(
            &[entry(1.0, 0.5, [1.0, 0.0, 0.0]), entry(2.0, 0.5, [0.0, 1.0, 0.0])],
            &RenderConfig::default(),
        )
        .unwrap();
        assert_eq!(f, [0.5, 0.25, 0.0]);
    }

    #[test]
    fn zero_alpha_changes_nothing() {
        let cfg = RenderConfig::default();
        let base = [entry(1.0, 0.5, [1.0, 0.0, 0.0]), entry(3.0, 0.5, [0.0, 1.0, 0.0])];
        let with_zero = [base[0], entry(2.0, 0.0, [0.3, 0.3, 0.3]), base[1]];
        assert_eq!(composite_pixel(&base, &cfg).unwrap(), composite_pixel(&with_zero, &cfg).unwrap());
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let r = composite_pixel(
            &[entry(2.0, 0.5, [1.0; 3]), entry(1.0, 0.5, [1.0; 3])],
            &RenderConfig::default(),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn order_matters() {
        let cfg = RenderConfig::default();
        let a = entry(1.0, 0.3, [1.0, 0.0, 0.0]);
        let b = entry(1.0, 0.7, [0.0, 1.0, 0.0]);
        assert_ne!(composite_pixel(&[a, b], &cfg).unwrap(), composite_pixel(&[b, a], &cfg).unwrap());
    }

    #[test]
    fn empty_cloud_renders_zeros() {
        let map = render_feature_map(&GaussianCloud::default(), &identity_cam(20, 10), &RenderConfig::default(), 20, 10, 0).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_filling_gaussian_matches_closed_form() {
        let f = [0.2, 0.4, 0.6];
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic([0.0, 0.0, 1.0], 5.0, 0.999, f)]);
        let map = render_feature_map(&cloud, &identity_cam(32, 32), &RenderConfig::default(), 32, 32, 0).unwrap();
        let c = map.get(16, 16);
        for i in 0..3 {
            assert!((c[i] - 0.99 * f[i]).abs() <= 0.01 * 0.99 * f[i], "{c:?}");
        }
    }

    #[test]
    fn weights_agree_with_direct_rendering() {
        let cloud = GaussianCloud::new(
            (0..30)
                .map(|i| {
                    let t = i as f64;
                    Gaussian::isotropic(
                        [(t * 0.37).sin() * 0.3, (t * 0.71).cos() * 0.3, 1.5 + 0.02 * t],
                        0.03 + 0.002 * t,
                        0.3 + 0.02 * t,
                        [(t * 0.1) % 1.0, 0.5, 1.0 - (t * 0.05) % 1.0],
                    )
                })
                .collect(),
        );
        let cam = identity_cam(40, 30);
        let cfg = RenderConfig { tile: 7, ..RenderConfig::default() };
        let direct = render_feature_map(&cloud, &cam, &cfg, 40, 30, 0).unwrap();
        let weights = ViewWeights::build(&cloud, &cam, &cfg, 40, 30).unwrap();
        assert_eq!(weights.render(&cloud.features()).unwrap(), direct.data);
        assert!(weights.coverage().iter().all(|&c| (0.0..=1.0 + 1e-12).contains(&c)));
    }

    #[test]
    fn backward_of_single_pixel_weight() {
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic([0.0, 0.0, 1.0], 0.002, 0.8, [0.5; 3])]);
        let cam = identity_cam(4, 4);
        let cfg = RenderConfig::default();
        let weights = ViewWeights::build(&cloud, &cam, &cfg, 4, 4).unwrap();
        let mut grads = vec![0.0; 4 * 4 * 3];
        let p = 2 * 4 + 2;
        grads[p * 3] = 1.5;
        let w: f64 = weights.pixel(p).map(|(_, w)| w).sum();
        let g = backward_features(&cloud, &cam, &cfg, &grads, 4, 4).unwrap();
        assert!((g[0][0] - 1.5 * w).abs() < 1e-15);
        assert_eq!(g[0][1], 0.0);
    }

    #[test]
    fn invisible_gaussian_gets_no_gradient() {
        let cloud = GaussianCloud::new(vec![
            Gaussian::isotropic([0.0, 0.0, 1.0], 0.05, 0.8, [0.5; 3]),
            Gaussian::isotropic([0.0, 0.0, -3.0], 0.05, 0.8, [0.5; 3]),
        ]);
        let g = backward_features(&cloud, &identity_cam(8, 8), &RenderConfig::default(), &vec![1.0; 8 * 8 * 3], 8, 8).unwrap();
        assert!(g[0][0] > 0.0);
        assert_eq!(g[1], [0.0; 3]);
    }

    #[test]
    fn mismatched_forward_state_is_rejected() {
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic([0.0, 0.0, 1.0], 0.05, 0.8, [0.5; 3])]);
        let weights = ViewWeights::build(&cloud, &identity_cam(8, 8), &RenderConfig::default(), 8, 8).unwrap();
        assert!(matches!(weights.render(&[[0.1; 3]; 2]), Err(Error::Contract(_))));
        assert!(matches!(weights.backward(&[0.0; 5]), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn weights_bounded_and_linear(
            alphas in prop::collection::vec(0.0f64..1.0, 1..12),
            feats in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 12),
            scale in 0.0f64..1.0,
        ) {
            let cfg = RenderConfig::default();
            let entries: Vec<CompositeEntry> = alphas.iter().enumerate().map(|(i, &a)| entry(i as f64, a, feats[i])).collect();
            let mut total = 0.0;
            blend(entries.iter().enumerate().map(|(i, e)| (i, e.alpha)), &cfg, |_, w| total += w);
            prop_assert!((0.0..=1.0).contains(&total));
            let f = composite_pixel(&entries, &cfg).unwrap();
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            let scaled: Vec<CompositeEntry> = entries.iter().map(|e| CompositeEntry { feature: e.feature.map(|v| v * scale), ..*e }).collect();
            let fs = composite_pixel(&scaled, &cfg).unwrap();
            for c in 0..3 {
                prop_assert!((fs[c] - scale * f[c]).abs() <= 1e-12);
            }
        }

        #[test]
        fn swapping_distinct_splats_changes_the_result(a in 0.05f64..0.95, b in 0.05f64..0.95) {
            prop_assume!((a - b).abs() > 1e-3);
            let cfg = RenderConfig::default();
            let x = entry(1.0, a, [1.0, 0.0, 0.0]);
            let y = entry(1.0, b, [0.0, 1.0, 0.0]);
            prop_assert_ne!(composite_pixel(&[x, y], &cfg).unwrap(), composite_pixel(&[y, x], &cfg).unwrap());
        }
    }
}
