//! Saturating two's-complement fixed point for inter-layer storage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid fixed-point format Q{total_bits}.{frac_bits}: need 1 <= total <= 16 and frac < total")]
pub struct FormatRangeError {
    pub total_bits: u32,
    pub frac_bits: u32,
}

/// Round half away from zero; the single rounding rule used across the crate.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FormatRangeError> {
        if !(1..=16).contains(&total_bits) || frac_bits >= total_bits {
            return Err(FormatRangeError {
                total_bits,
                frac_bits,
            });
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    /// Widest fraction that still represents `max_abs` without overflow.
    /// A 1-bit format holds only {-1, 0} and always gets zero fraction bits.
    pub fn fitting(total_bits: u32, max_abs: f64) -> Result<Self, FormatRangeError> {
        let mut fmt = Self::new(total_bits, 0)?;
        let max_raw = fmt.max_raw() as f64;
        for frac in (0..total_bits).rev() {
            if max_abs * (1u64 << frac) as f64 <= max_raw {
                fmt.frac_bits = frac;
                break;
            }
        }
        Ok(fmt)
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn max_raw(&self) -> i32 {
        (1i32 << (self.total_bits - 1)) - 1
    }

    pub fn min_raw(&self) -> i32 {
        -(1i32 << (self.total_bits - 1))
    }

    pub fn lsb(&self) -> f64 {
        1.0 / (1u32 << self.frac_bits) as f64
    }

    /// Raw integer and whether it saturated.
    pub fn encode(&self, x: f64) -> (i32, bool) {
        let scaled = round_half_away(x * (1u32 << self.frac_bits) as f64);
        if scaled > self.max_raw() as f64 {
            (self.max_raw(), true)
        } else if scaled < self.min_raw() as f64 {
            (self.min_raw(), true)
        } else if scaled.is_nan() {
            (0, true)
        } else {
            (scaled as i32, false)
        }
    }

    pub fn decode(&self, raw: i32) -> f64 {
        raw as f64 * self.lsb()
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.decode(self.encode(x).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
        assert_eq!(round_half_away(0.49), 0.0);
    }

    #[test]
    fn format_bounds() {
        assert!(FixedPointFormat::new(0, 0).is_err());
        assert!(FixedPointFormat::new(17, 0).is_err());
        assert!(FixedPointFormat::new(8, 8).is_err());
        let q = FixedPointFormat::new(8, 4).unwrap();
        assert_eq!(q.max_raw(), 127);
        assert_eq!(q.min_raw(), -128);
        assert_eq!(q.encode(1.03125), (17, false));
        assert_eq!(q.encode(100.0), (127, true));
        assert_eq!(q.encode(-100.0), (-128, true));
        assert_eq!(q.decode(17), 1.0625);
    }

    #[test]
    fn fitting_chooses_widest_fraction() {
        let q = FixedPointFormat::fitting(8, 3.9).unwrap();
        assert_eq!(q.frac_bits(), 5);
        let q = FixedPointFormat::fitting(8, 1000.0).unwrap();
        assert_eq!(q.frac_bits(), 0);
        let q = FixedPointFormat::fitting(1, 0.2).unwrap();
        assert_eq!(q.frac_bits(), 0);
        let q = FixedPointFormat::fitting(16, 0.0).unwrap();
        assert_eq!(q.frac_bits(), 15);
    }

    proptest! {
        #[test]
        fn quantize_error_within_half_lsb(total in 2u32..=16, x in -0.99f64..0.99) {
            let q = FixedPointFormat::new(total, total - 1).unwrap();
            let (_, sat) = q.encode(x);
            if !sat {
                prop_assert!((q.quantize(x) - x).abs() <= q.lsb() / 2.0 + 1e-15);
            }
        }

        #[test]
        fn encode_is_monotone(total in 1u32..=16, a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let q = FixedPointFormat::fitting(total, 10.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.encode(lo).0 <= q.encode(hi).0);
        }
    }
}
