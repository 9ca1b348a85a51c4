use crate::error::{Error, Result};
use crate::scene::{Bitmap, FeatureMap};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn ssim_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub l1: f64,
    /// `1 - mean SSIM` over covered pixels.
    pub dssim: f64,
    /// d loss / d render, interleaved like [`FeatureMap::data`].
    pub grad: Vec<f64>,
}

/// Mixed L1 and D-SSIM loss restricted to covered pixels, with its
/// analytic gradient.
///
/// SSIM runs on the coverage-masked images. Uncovered pixels contribute
/// nothing to the loss or the gradient.
pub fn feature_loss(
    render: &FeatureMap,
    target: &FeatureMap,
    coverage: &Bitmap,
    lambda: f64,
) -> Result<LossOutput> {
    if (render.width, render.height) != (target.width, target.height)
        || (render.width, render.height) != (coverage.width(), coverage.height())
    {
        return Err(Error::contract(format!(
            "dimension mismatch: render {}x{}, target {}x{}, coverage {}x{}",
            render.width,
            render.height,
            target.width,
            target.height,
            coverage.width(),
            coverage.height()
        )));
    }
    loss_on_slices(
        &render.data,
        &target.data,
        coverage.bits(),
        render.width,
        render.height,
        lambda,
    )
}

pub(crate) fn loss_on_slices(
    render: &[f64],
    target: &[f64],
    coverage: &[bool],
    width: usize,
    height: usize,
    lambda: f64,
) -> Result<LossOutput> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain(format!("lambda {lambda} outside [0, 1]")));
    }
    let n_px = width * height;
    if render.len() != n_px * 3 || target.len() != n_px * 3 || coverage.len() != n_px {
        return Err(Error::contract("buffer lengths disagree with image size"));
    }
    let covered = coverage.iter().filter(|&&c| c).count();
    if covered == 0 {
        return Err(Error::NoSupervisedPixels);
    }
    let n = covered as f64;
    let mask: Vec<f64> = coverage.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();

    let mut grad = vec![0.0; n_px * 3];
    let mut l1 = 0.0;
    let l1_scale = (1.0 - lambda) / (3.0 * n);
    for p in 0..n_px {
        if !coverage[p] {
            continue;
        }
        for c in 0..3 {
            let d = render[p * 3 + c] - target[p * 3 + c];
            l1 += d.abs();
            grad[p * 3 + c] = l1_scale * sign(d);
        }
    }
    l1 /= 3.0 * n;

    let mut ssim_sum = 0.0;
    let conv = Conv::new(width, height);
    for c in 0..3 {
        let x: Vec<f64> = (0..n_px).map(|p| render[p * 3 + c] * mask[p]).collect();
        let y: Vec<f64> = (0..n_px).map(|p| target[p * 3 + c] * mask[p]).collect();
        let (mean, dx) = ssim_channel(&conv, &x, &y, &mask, n);
        ssim_sum += mean;
        let scale = -lambda / 3.0;
        for p in 0..n_px {
            grad[p * 3 + c] += scale * mask[p] * dx[p];
        }
    }
    let dssim = 1.0 - ssim_sum / 3.0;
    Ok(LossOutput {
        loss: (1.0 - lambda) * l1 + lambda * dssim,
        l1,
        dssim,
        grad,
    })
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Separable zero-padded "same" convolution with the SSIM window.
struct Conv {
    w: usize,
    h: usize,
    taps: [f64; WINDOW],
}

impl Conv {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            taps: ssim_window(),
        }
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let r = (WINDOW / 2) as isize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in self.taps.iter().enumerate() {
                    let xx = x as isize + k as isize - r;
                    if xx >= 0 && (xx as usize) < w {
                        acc += t * row[xx as usize];
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for (k, t) in self.taps.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy < 0 || yy as usize >= h {
                    continue;
                }
                let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src_row) {
                    *d += t * s;
                }
            }
        }
        out
    }
}

/// Masked mean SSIM of one channel and its gradient with respect to `x`.
fn ssim_channel(conv: &Conv, x: &[f64], y: &[f64], mask: &[f64], n: f64) -> (f64, Vec<f64>) {
    let len = x.len();
    let mu_x = conv.apply(x);
    let mu_y = conv.apply(y);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let e_xx = conv.apply(&xx);
    let e_yy = conv.apply(&yy);
    let e_xy = conv.apply(&xy);

    let mut mean = 0.0;
    let mut a = vec![0.0; len];
    let mut b = vec![0.0; len];
    let mut c = vec![0.0; len];
    for p in 0..len {
        if mask[p] == 0.0 {
            continue;
        }
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = e_xx[p] - mx * mx;
        let syy = e_yy[p] - my * my;
        let sxy = e_xy[p] - mx * my;
        let n1 = 2.0 * mx * my + SSIM_C1;
        let n2 = 2.0 * sxy + SSIM_C2;
        let d1 = mx * mx + my * my + SSIM_C1;
        let d2 = sxx + syy + SSIM_C2;
        let s = n1 * n2 / (d1 * d2);
        mean += s;
        let k = mask[p] / n;
        a[p] = k * ((2.0 * my * n2 - 2.0 * my * n1) / (d1 * d2) - s * (2.0 * mx / d1 - 2.0 * mx / d2));
        b[p] = k * (-s / d2);
        c[p] = k * (2.0 * n1 / (d1 * d2));
    }
    let ga = conv.apply(&a);
    let gb = conv.apply(&b);
    let gc = conv.apply(&c);
    let grad = (0..len)
        .map(|q| ga[q] + 2.0 * x[q] * gb[q] + y[q] * gc[q])
        .collect();
    (mean / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(seed: u64, w: usize, h: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0.1..0.9)).collect();
        // Targets stay away from the L1 kink at r == t.
        let t: Vec<f64> = r
            .iter()
            .map(|&v| {
                let d: f64 = rng.random_range(0.05..0.2);
                if rng.random_bool(0.5) { v + d } else { v - d }
            })
            .collect();
        let cov: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.8)).collect();
        (r, t, cov)
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = ssim_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW {
            assert_eq!(w[i], w[WINDOW - 1 - i]);
        }
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let (r, _, cov) = random_pair(1, 9, 7);
        let out = loss_on_slices(&r, &r, &cov, 9, 7, 0.2).unwrap();
        assert!(out.loss.abs() < 1e-12, "{}", out.loss);
    }

    #[test]
    fn pure_l1_of_constant_offset() {
        let t = vec![0.4; 8 * 8 * 3];
        let r: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        let out = loss_on_slices(&r, &t, &[true; 64], 8, 8, 0.0).unwrap();
        assert!((out.loss - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mix_is_exact() {
        let (r, t, cov) = random_pair(2, 12, 10);
        let out = loss_on_slices(&r, &t, &cov, 12, 10, 0.2).unwrap();
        assert!((out.loss - (0.8 * out.l1 + 0.2 * out.dssim)).abs() < 1e-12);
    }

    #[test]
    fn empty_coverage_is_an_error() {
        let r = vec![0.5; 4 * 4 * 3];
        assert!(matches!(
            loss_on_slices(&r, &r, &[false; 16], 4, 4, 0.2),
            Err(Error::NoSupervisedPixels)
        ));
    }

    #[test]
    fn uncovered_pixels_are_ignored() {
        let (r, t, cov) = random_pair(3, 10, 10);
        let base = loss_on_slices(&r, &t, &cov, 10, 10, 0.2).unwrap();
        let mut r2 = r.clone();
        for p in 0..100 {
            if !cov[p] {
                r2[p * 3] = 0.99;
            }
        }
        let other = loss_on_slices(&r2, &t, &cov, 10, 10, 0.2).unwrap();
        assert_eq!(base.loss, other.loss);
        for p in 0..100 {
            if !cov[p] {
                assert_eq!(&base.grad[p * 3..p * 3 + 3], &[0.0; 3]);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (w, h) = (13, 11);
        for seed in 0..4 {
            let (r, t, cov) = random_pair(10 + seed, w, h);
            let out = loss_on_slices(&r, &t, &cov, w, h, 0.2).unwrap();
            let step = 1e-5;
            for i in (0..r.len()).step_by(7) {
                let mut hi = r.clone();
                let mut lo = r.clone();
                hi[i] += step;
                lo[i] -= step;
                let fd = (loss_on_slices(&hi, &t, &cov, w, h, 0.2).unwrap().loss
                    - loss_on_slices(&lo, &t, &cov, w, h, 0.2).unwrap().loss)
                    / (2.0 * step);
                let g = out.grad[i];
                let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                assert!(err < 1e-4 || (g - fd).abs() < 1e-10, "i={i} g={g} fd={fd}");
            }
        }
    }
}
