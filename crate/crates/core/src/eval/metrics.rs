use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::query::QueryResult;
use crate::scene::{Bitmap, PixelRect};

/// `(IoU, pixel accuracy)`. IoU of two empty masks is 1.
pub fn mask_metrics(pred: &Bitmap, truth: &Bitmap) -> Result<(f64, f64)> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::contract(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let inter = pred.intersection_count(truth);
    let union = pred.count() + truth.count() - inter;
    let total = pred.bits().len();
    let agree = pred.bits().iter().zip(truth.bits()).filter(|(a, b)| a == b).count();
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let acc = if total == 0 { 1.0 } else { agree as f64 / total as f64 };
    Ok((iou, acc))
}

/// Whether the result's closest pixel to its target lies in `truth_box`.
pub fn localization_hit(result: &QueryResult, truth_box: &PixelRect) -> bool {
    result
        .best_pixel()
        .is_some_and(|(x, y)| truth_box.contains(x, y))
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sa: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sb: f64 = cols.values().map(|&c| comb2(c)).sum();
    let expected = sa * sb / comb2(n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        // Both labelings are all-one-cluster or all-singletons.
        return if index == max { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(x0: usize, x1: usize) -> Bitmap {
        Bitmap::from_fn(10, 10, |x, _| (x0..x1).contains(&x))
    }

    #[test]
    fn metric_examples() {
        let m = rect_mask(2, 5);
        assert_eq!(mask_metrics(&m, &m).unwrap(), (1.0, 1.0));
        assert_eq!(mask_metrics(&rect_mask(0, 1), &rect_mask(5, 6)).unwrap(), (0.0, 0.8));
        assert_eq!(mask_metrics(&rect_mask(0, 4), &rect_mask(0, 2)).unwrap().0, 0.5);
        assert_eq!(mask_metrics(&Bitmap::new(10, 10), &Bitmap::new(10, 10)).unwrap().0, 1.0);
        assert!(mask_metrics(&Bitmap::new(3, 3), &m).is_err());
        let (a, b) = (rect_mask(1, 6), rect_mask(3, 9));
        assert_eq!(mask_metrics(&a, &b).unwrap().0, mask_metrics(&b, &a).unwrap().0);
    }

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 3, 3]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[4, 5, 6]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 1, 2]), 0.0);
        // Reference value from the standard contingency formula.
        let v = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]);
        assert!((v - 0.24242424242424243).abs() < 1e-12, "{v}");
    }
}
