use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::loss_on_slices;
use super::{RenderConfig, ViewWeights};
use crate::error::{Error, Result};
use crate::scene::{Bitmap, Camera, FeatureMap, GaussianCloud, TrainConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// One supervised view: a camera plus its baked target and coverage.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: Camera,
    pub target: FeatureMap,
    pub coverage: Bitmap,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    /// Loss of every iteration, in order.
    pub history: Vec<f64>,
}

struct Adam {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![[0.0; 3]; n],
            v: vec![[0.0; 3]; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [[f64; 3]], grads: &[[f64; 3]]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for c in 0..3 {
                m[c] = BETA1 * m[c] + (1.0 - BETA1) * g[c];
                v[c] = BETA2 * v[c] + (1.0 - BETA2) * g[c] * g[c];
                let update = self.lr * (m[c] / bc1) / ((v[c] / bc2).sqrt() + EPS);
                p[c] = (p[c] - update).clamp(0.0, 1.0);
            }
        }
    }
}

/// Fits per-Gaussian features to the baked views with geometry frozen.
///
/// Views are visited in a freshly shuffled order every epoch. The result
/// depends only on the inputs and `cfg.seed`.
pub fn train_features(
    cloud: &GaussianCloud,
    views: &[TrainingView],
    cfg: &TrainConfig,
    render_cfg: &RenderConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    render_cfg.validate()?;
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            cloud: cloud.clone(),
            history: Vec::new(),
        });
    }
    if views.is_empty() {
        return Err(Error::domain("training needs at least one view"));
    }
    for (i, v) in views.iter().enumerate() {
        let (w, h) = (v.target.width, v.target.height);
        if (v.coverage.width(), v.coverage.height()) != (w, h) {
            return Err(Error::contract(format!("view {i}: coverage size differs from target")));
        }
    }
    let weights: Vec<ViewWeights> = views
        .par_iter()
        .map(|v| ViewWeights::build(cloud, &v.camera, render_cfg, v.target.width, v.target.height))
        .collect::<Result<_>>()?;

    let mut features = cloud.features();
    let mut adam = Adam::new(features.len(), cfg.step_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let vi = order[cursor];
        cursor += 1;
        let view = &views[vi];
        let vw = &weights[vi];
        let render = vw.render(&features)?;
        let out = loss_on_slices(
            &render,
            &view.target.data,
            view.coverage.bits(),
            vw.width,
            vw.height,
            cfg.lambda,
        )?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: out.loss,
            });
        }
        history.push(out.loss);
        let grads = vw.backward(&out.grad)?;
        adam.step(&mut features, &grads);
    }
    let mut trained = cloud.clone();
    trained.set_features(&features)?;
    Ok(TrainOutcome {
        cloud: trained,
        history,
    })
}
