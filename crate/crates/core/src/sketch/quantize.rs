//! 6-bit uniform quantization of normalized coordinates.
//!
//! Bin `k` covers `((k - 1) / 64, k / 64]`, so `0.0` falls into bin 0, i.e. the
//! interval `(-0.015625, 0]`. Values above `63 / 64` clamp into the top bin.

use super::SketchError;

/// Number of quantization bits.
pub const BITS: u32 = 6;
/// Number of bins.
pub const BIN_COUNT: usize = 1 << BITS;
/// Width of one bin in normalized units.
pub const BIN_WIDTH: f64 = 1.0 / BIN_COUNT as f64;

/// Maps a finite real value to its bin index in `0..64`.
pub fn quantize(v: f64) -> u8 {
    debug_assert!(v.is_finite(), "quantize expects a finite value");
    let k = (v / BIN_WIDTH).ceil();
    k.clamp(0.0, (BIN_COUNT - 1) as f64) as u8
}

/// Returns the right edge `k / 64` of bin `k`.
pub fn dequantize(k: u8) -> Result<f64, SketchError> {
    if usize::from(k) >= BIN_COUNT {
        return Err(SketchError::BinOutOfRange(k));
    }
    Ok(f64::from(k) * BIN_WIDTH)
}

/// Half-open interval `(lo, hi]` covered by bin `k`.
pub fn bin_interval(k: u8) -> (f64, f64) {
    let hi = f64::from(k) * BIN_WIDTH;
    (hi - BIN_WIDTH, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchors() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(bin_interval(0), (-0.015625, 0.0));
        assert_eq!(quantize(1.0), 63);
        assert_eq!(quantize(0.5), 32);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.5), 63);
    }

    #[test]
    fn dequantize_edges() {
        assert_eq!(dequantize(0).unwrap(), 0.0);
        assert_eq!(dequantize(63).unwrap(), 0.984375);
        assert!(matches!(dequantize(64), Err(SketchError::BinOutOfRange(64))));
    }

    #[test]
    fn round_trip_every_bin() {
        for k in 0..BIN_COUNT as u8 {
            assert_eq!(quantize(dequantize(k).unwrap()), k);
        }
    }

    proptest! {
        #[test]
        fn monotone(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo) <= quantize(hi));
        }

        #[test]
        fn reconstruction_error_below_bin_width(v in 0.0f64..1.0) {
            let back = dequantize(quantize(v)).unwrap();
            prop_assert!((v - back).abs() < BIN_WIDTH);
        }

        #[test]
        fn value_lies_in_its_bin(v in 0.0f64..0.984375) {
            let (lo, hi) = bin_interval(quantize(v));
            prop_assert!(lo < v && v <= hi);
        }
    }
}
