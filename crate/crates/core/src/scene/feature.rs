use crate::error::{Error, Result};

/// Factor between the unit feature space and the 8-bit display scale in
/// which the activation threshold is expressed.
pub const FEATURE_SCALE: f64 = 255.0;

/// Maps a low-dimensional feature from `(0, 1)^3` to `(0, 255)^3`.
pub fn encode_feature(f: [f64; 3]) -> Result<[f64; 3]> {
    for (i, &c) in f.iter().enumerate() {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::domain(format!(
                "feature component {i} = {c} outside (0, 1)"
            )));
        }
    }
    Ok(f.map(|c| c * FEATURE_SCALE))
}

/// Inverse of [`encode_feature`].
pub fn decode_feature(scaled: [f64; 3]) -> Result<[f64; 3]> {
    for (i, &c) in scaled.iter().enumerate() {
        if !(c > 0.0 && c < FEATURE_SCALE) {
            return Err(Error::domain(format!(
                "scaled feature component {i} = {c} outside (0, 255)"
            )));
        }
    }
    Ok(scaled.map(|c| c / FEATURE_SCALE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_by_linear_scaling() {
        assert_eq!(encode_feature([0.5, 0.5, 0.5]).unwrap(), [127.5, 127.5, 127.5]);
        assert_eq!(
            encode_feature([0.25, 0.75, 0.25]).unwrap(),
            [63.75, 191.25, 63.75]
        );
    }

    #[test]
    fn round_trips() {
        let back = decode_feature(encode_feature([0.1, 0.2, 0.3]).unwrap()).unwrap();
        for (a, b) in back.iter().zip([0.1, 0.2, 0.3]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_closed_endpoints() {
        assert!(encode_feature([0.0, 0.5, 0.5]).is_err());
        assert!(encode_feature([0.5, 1.0, 0.5]).is_err());
        assert!(encode_feature([0.5, f64::NAN, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn strictly_monotone_per_component(a in 1e-6f64..0.999_999, b in 1e-6f64..0.999_999) {
            let ea = encode_feature([a, 0.5, 0.5]).unwrap()[0];
            let eb = encode_feature([b, 0.5, 0.5]).unwrap()[0];
            prop_assert_eq!(a < b, ea < eb);
            prop_assert_eq!(a == b, ea == eb);
        }

        #[test]
        fn round_trip_within_tolerance(f in prop::array::uniform3(1e-6f64..0.999_999)) {
            let back = decode_feature(encode_feature(f).unwrap()).unwrap();
            for i in 0..3 {
                prop_assert!((back[i] - f[i]).abs() <= 1e-12);
            }
        }
    }
}
