//! IEEE 754 binary16 conversion with round-to-nearest-even.
//!
//! Half floats only exist at rest (quantized weights, the model file format);
//! all arithmetic happens in f32 after decoding. Conversions are
//! payload-preserving, so encode/decode round-trips are bit-exact for every
//! 16-bit pattern including NaNs.

const F16_EXP_MASK: u16 = 0x7C00;
const F16_MAN_MASK: u16 = 0x03FF;
const F16_SIGN_MASK: u16 = 0x8000;

/// Encode an f32 as binary16 bits, rounding to nearest-even.
pub fn f32_to_f16_bits(value: f32) -> u16 {
    let bits = value.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;

    if exp == 0xFF {
        // Inf stays Inf; NaN keeps the top 10 payload bits, forced quiet if
        // truncation would otherwise produce an Inf pattern.
        if man == 0 {
            return sign | F16_EXP_MASK;
        }
        let payload = (man >> 13) as u16;
        return sign | F16_EXP_MASK | if payload == 0 { 0x0200 } else { payload };
    }

    let unbiased = exp - 127;
    if unbiased >= 16 {
        // Too large for binary16 (max finite is 65504): overflow to Inf.
        return sign | F16_EXP_MASK;
    }

    if unbiased >= -14 {
        // Normal range. Keep 10 mantissa bits, round on the remaining 13.
        let half_exp = (unbiased + 15) as u32;
        let half_man = man >> 13;
        let round = man & 0x1FFF;
        let mut combined = (half_exp << 10) | half_man;
        if round > 0x1000 || (round == 0x1000 && (half_man & 1) == 1) {
            // Carry may ripple into the exponent; 65504 + ulp correctly
            // becomes Inf this way.
            combined += 1;
        }
        return sign | combined as u16;
    }

    // Subnormal or underflow. Value is 1.man * 2^unbiased with unbiased < -14;
    // the half subnormal ulp is 2^-24.
    if unbiased < -25 {
        return sign; // rounds to zero
    }
    let full_man = man | 0x0080_0000; // restore implicit leading 1, 24 bits
    let shift = (-14 - unbiased) as u32 + 13; // 14..=24
    let half_man = full_man >> shift;
    let round_mask = (1u32 << shift) - 1;
    let round = full_man & round_mask;
    let halfway = 1u32 << (shift - 1);
    let mut result = half_man;
    if round > halfway || (round == halfway && (half_man & 1) == 1) {
        result += 1;
    }
    sign | result as u16
}

/// Decode binary16 bits to f32. Exact for all finite and infinite inputs.
pub fn f16_bits_to_f32(bits: u16) -> f32 {
    let sign = ((bits & F16_SIGN_MASK) as u32) << 16;
    let exp = ((bits & F16_EXP_MASK) >> 10) as u32;
    let man = (bits & F16_MAN_MASK) as u32;

    let out = if exp == 0 {
        if man == 0 {
            sign
        } else {
            // Subnormal: man * 2^-24. Normalize into an f32.
            let z = man.leading_zeros() - 22; // zeros within the 10-bit field
            let norm_man = (man << (z + 1)) & F16_MAN_MASK as u32;
            let norm_exp = 112 - z; // (-15 - z) + 127
            sign | (norm_exp << 23) | (norm_man << 13)
        }
    } else if exp == 0x1F {
        sign | 0x7F80_0000 | (man << 13)
    } else {
        sign | ((exp + 127 - 15) << 23) | (man << 13)
    };
    f32::from_bits(out)
}

/// Round an f32 to the nearest binary16-representable value.
pub fn f16_round(value: f32) -> f32 {
    f16_bits_to_f32(f32_to_f16_bits(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_small_integers_and_one() {
        assert_eq!(f32_to_f16_bits(1.0), 0x3C00);
        assert_eq!(f32_to_f16_bits(-2.0), 0xC000);
        assert_eq!(f32_to_f16_bits(0.0), 0x0000);
        assert_eq!(f32_to_f16_bits(-0.0), 0x8000);
        assert_eq!(f16_bits_to_f32(0x3C00), 1.0);
    }

    #[test]
    fn tenth_rounds_to_known_half_value() {
        // 0.1 is not representable; the nearest half is 0.0999755859375.
        let bits = f32_to_f16_bits(0.1);
        assert_eq!(bits, 0x2E66);
        assert_eq!(f16_bits_to_f32(bits), 0.0999755859375);
    }

    #[test]
    fn overflow_saturates_to_infinity() {
        assert_eq!(f16_bits_to_f32(0x7BFF), 65504.0); // max finite half
        assert_eq!(f32_to_f16_bits(65504.0), 0x7BFF);
        // 65520 is the midpoint between 65504 and the unrepresentable 65536;
        // ties-to-even sends it to Inf.
        assert_eq!(f32_to_f16_bits(65520.0), 0x7C00);
        assert_eq!(f32_to_f16_bits(1e9), 0x7C00);
        assert!(f16_bits_to_f32(0x7C00).is_infinite());
    }

    #[test]
    fn subnormals_and_underflow() {
        let ulp = 2.0_f32.powi(-24);
        assert_eq!(f32_to_f16_bits(ulp), 0x0001);
        assert_eq!(f16_bits_to_f32(0x0001), ulp);
        // Half an ulp ties to even -> zero; anything above rounds up.
        assert_eq!(f32_to_f16_bits(ulp / 2.0), 0x0000);
        assert_eq!(f32_to_f16_bits(ulp * 0.75), 0x0001);
        assert_eq!(f32_to_f16_bits(ulp * 1.5), 0x0002); // tie -> even
        assert_eq!(f32_to_f16_bits(-ulp), 0x8001);
        // Largest subnormal.
        assert_eq!(f16_bits_to_f32(0x03FF), 1023.0 * 2.0_f32.powi(-24));
    }

    #[test]
    fn round_to_nearest_even_on_normals() {
        // 2048.5 sits exactly between 2048 and 2050 (ulp 2 at this scale)?
        // No: ulp at 2048 is 1? Half has 11 significand bits: ulp(2048) = 2.
        // 2049 is the midpoint between 2048 and 2050 -> ties to 2048 (even).
        assert_eq!(f16_bits_to_f32(f32_to_f16_bits(2049.0)), 2048.0);
        // 2051 is the midpoint between 2050 and 2052 -> ties to 2052 (even).
        assert_eq!(f16_bits_to_f32(f32_to_f16_bits(2051.0)), 2052.0);
        assert_eq!(f16_bits_to_f32(f32_to_f16_bits(2050.7)), 2050.0);
    }

    #[test]
    fn nan_stays_nan() {
        assert!(f16_bits_to_f32(0x7E00).is_nan());
        let bits = f32_to_f16_bits(f32::NAN);
        assert_eq!(bits & F16_EXP_MASK, F16_EXP_MASK);
        assert_ne!(bits & F16_MAN_MASK, 0);
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_pattern() {
        for bits in 0..=u16::MAX {
            let back = f32_to_f16_bits(f16_bits_to_f32(bits));
            assert_eq!(back, bits, "pattern {bits:#06x} did not round-trip");
        }
    }

    #[test]
    fn encoding_is_idempotent() {
        for &v in &[0.1f32, -3.7, 1e-5, 123.456, -65504.0, 2.0e-26] {
            let once = f16_round(v);
            assert_eq!(f16_round(once), once);
        }
    }

    #[test]
    fn relative_error_bound_for_normal_range() {
        // RNE on an 11-bit significand: relative error <= 2^-11.
        let mut x = 6.1e-5f32; // just above the smallest normal half
        while x < 6.0e4 {
            let err = (f16_round(x) - x).abs() / x;
            assert!(err <= 2.0_f32.powi(-11), "x={x} err={err}");
            x *= 1.37;
        }
    }
}
