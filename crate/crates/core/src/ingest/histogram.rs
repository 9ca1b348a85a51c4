use crate::error::{Error, Result};
use crate::scene::{Bitmap, ColorHistogram, PosedImage, HIST_BINS};

/// Joint 8x8x8 RGB histogram over the masked pixels, L1-normalized.
pub fn compute_color_histogram(image: &PosedImage, mask: &Bitmap) -> Result<ColorHistogram> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::contract(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let mut counts = [0u64; HIST_BINS];
    let mut total = 0u64;
    for (i, px) in image.rgb.pixels().enumerate() {
        if mask.bits()[i] {
            counts[ColorHistogram::bin_of(px.0)] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::domain("histogram of a zero-area mask"));
    }
    let n = total as f64;
    ColorHistogram::from_bins(counts.iter().map(|&c| (c as f64 / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Camera;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn posed(img: RgbImage) -> PosedImage {
        PosedImage {
            rgb: img,
            camera: Camera::look_at([0.0, 0.0, -1.0], [0.0; 3], [0.0, 1.0, 0.0], 1.0, 1.0, 0.0, 0.0),
        }
    }

    #[test]
    fn uniform_region_fills_one_bin() {
        let img = posed(RgbImage::from_pixel(8, 8, Rgb([200, 10, 90])));
        let h = compute_color_histogram(&img, &Bitmap::from_fn(8, 8, |x, _| x < 4)).unwrap();
        let b = ColorHistogram::bin_of([200, 10, 90]);
        assert_eq!(h.bins()[b], 1.0);
        assert_eq!(h.bins().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn two_equal_colors_split_evenly() {
        let img = posed(RgbImage::from_fn(8, 8, |x, _| {
            if x < 4 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) }
        }));
        let h = compute_color_histogram(&img, &Bitmap::from_fn(8, 8, |_, _| true)).unwrap();
        assert_eq!(h.bins()[0], 0.5);
        assert_eq!(h.bins()[HIST_BINS - 1], 0.5);
    }

    #[test]
    fn three_pixel_mask_counts_by_hand() {
        // Pixels 0 and 1 share a bin, pixel 2 lands elsewhere.
        let img = posed(RgbImage::from_fn(3, 1, |x, _| match x {
            0 => Rgb([10, 10, 10]),
            1 => Rgb([31, 0, 20]),
            _ => Rgb([40, 10, 10]),
        }));
        let h = compute_color_histogram(&img, &Bitmap::from_fn(3, 1, |_, _| true)).unwrap();
        let b1 = ColorHistogram::bin_of([10, 10, 10]);
        let b2 = ColorHistogram::bin_of([40, 10, 10]);
        assert_eq!(b1, ColorHistogram::bin_of([31, 0, 20]));
        assert_ne!(b1, b2);
        assert_eq!(h.bins()[b1], (2.0f64 / 3.0) as f32);
        assert_eq!(h.bins()[b2], (1.0f64 / 3.0) as f32);
    }

    #[test]
    fn zero_area_is_a_domain_error() {
        let img = posed(RgbImage::new(4, 4));
        assert!(matches!(
            compute_color_histogram(&img, &Bitmap::new(4, 4)),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn always_normalized(pixels in prop::collection::vec(any::<[u8; 3]>(), 36), mask in prop::collection::vec(any::<bool>(), 36)) {
            prop_assume!(mask.iter().any(|&b| b));
            let img = posed(RgbImage::from_fn(6, 6, |x, y| Rgb(pixels[(y * 6 + x) as usize])));
            let bm = Bitmap::from_bits(6, 6, mask).unwrap();
            let h = compute_color_histogram(&img, &bm).unwrap();
            prop_assert!(h.is_normalized());
        }
    }
}
