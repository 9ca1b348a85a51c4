//! Run-length encoding of binary masks: row-major, alternating
//! `(skip, run)` counts starting with a skip, trailing skip omitted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Bitmap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

pub fn encode(mask: &Bitmap) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut n = 0u32;
    for &b in mask.bits() {
        if b == current {
            n += 1;
        } else {
            counts.push(n);
            current = b;
            n = 1;
        }
    }
    if current {
        counts.push(n);
    }
    RleMask {
        width: mask.width(),
        height: mask.height(),
        counts,
    }
}

pub fn decode(rle: &RleMask) -> Result<Bitmap> {
    let total = rle.width * rle.height;
    let mut bits = Vec::with_capacity(total);
    for (i, &c) in rle.counts.iter().enumerate() {
        if i > 0 && c == 0 {
            return Err(Error::domain(format!("zero-length run at position {i}")));
        }
        if bits.len() + c as usize > total {
            return Err(Error::domain("runs exceed the mask size"));
        }
        bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    bits.resize(total, false);
    Bitmap::from_bits(rle.width, rle.height, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_cases() {
        let m = Bitmap::from_bits(4, 2, vec![true, true, false, false, false, true, false, false]).unwrap();
        assert_eq!(encode(&m).counts, vec![0, 2, 3, 1]);
        assert!(encode(&Bitmap::new(3, 3)).counts.is_empty());
        let full = Bitmap::from_fn(2, 2, |_, _| true);
        assert_eq!(encode(&full).counts, vec![0, 4]);
    }

    #[test]
    fn rejects_overlong_runs() {
        let r = RleMask { width: 2, height: 2, counts: vec![3, 2] };
        assert!(decode(&r).is_err());
    }

    proptest! {
        #[test]
        fn round_trips(bits in prop::collection::vec(any::<bool>(), 30)) {
            let m = Bitmap::from_bits(6, 5, bits).unwrap();
            let rle = encode(&m);
            prop_assert_eq!(&decode(&rle).unwrap(), &m);
            prop_assert_eq!(encode(&decode(&rle).unwrap()), rle);
        }
    }
}
