//! IEEE 754 binary16 storage codec.
//!
//! Feature matrices may keep their elements as 16-bit values; all arithmetic
//! happens on `f32` after widening. Narrowing rounds to nearest, ties to even.

const F32_EXP_BIAS: i32 = 127;
const F16_EXP_BIAS: i32 = 15;

/// Largest finite binary16 value.
pub const F16_MAX: f32 = 65504.0;
/// Smallest positive normal binary16 value, 2^-14.
pub const F16_MIN_POSITIVE: f32 = 6.103_515_6e-5;

/// Narrow an `f32` to binary16 bits, rounding to nearest even.
///
/// Values beyond the finite range become infinity; NaN stays NaN.
pub fn encode_f16(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let mant = bits & 0x007f_ffff;

    if exp == 0xff {
        // inf / nan; keep a quiet payload bit for nan
        return if mant == 0 {
            sign | 0x7c00
        } else {
            sign | 0x7e00 | (mant >> 13) as u16
        };
    }

    let unbiased = exp - F32_EXP_BIAS;
    if unbiased > F16_EXP_BIAS {
        return sign | 0x7c00;
    }

    if unbiased >= -14 {
        // normal range: drop 13 mantissa bits with round-to-nearest-even
        let half_exp = (unbiased + F16_EXP_BIAS) as u32;
        let mut out = (half_exp << 10) | (mant >> 13);
        let rest = mant & 0x1fff;
        if rest > 0x1000 || (rest == 0x1000 && (out & 1) == 1) {
            // carry may roll into the exponent, and up to infinity
            out += 1;
        }
        return sign | out as u16;
    }

    // subnormal or zero in binary16
    if unbiased < -25 {
        return sign;
    }
    let full_mant = mant | 0x0080_0000;
    // value = full_mant * 2^(unbiased - 23); subnormal unit is 2^-24
    let shift = (-1 - unbiased) as u32; // 14..=24 here
    let mut out = full_mant >> shift;
    let rest = full_mant & ((1u32 << shift) - 1);
    let halfway = 1u32 << (shift - 1);
    if rest > halfway || (rest == halfway && (out & 1) == 1) {
        out += 1;
    }
    sign | out as u16
}

/// Widen binary16 bits to `f32`. Exact for every input.
pub fn decode_f16(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let mant = (h & 0x03ff) as u32;

    let bits = match (exp, mant) {
        (0, 0) => sign,
        (0, _) => {
            // renormalize the subnormal
            let lead = mant.leading_zeros() - 22; // zeros within the 10-bit field
            let m = (mant << (lead + 1)) & 0x03ff;
            let e = (F32_EXP_BIAS - F16_EXP_BIAS - lead as i32) as u32;
            sign | (e << 23) | (m << 13)
        }
        (0x1f, 0) => sign | 0x7f80_0000,
        (0x1f, _) => sign | 0x7fc0_0000 | (mant << 13),
        _ => sign | ((exp + (F32_EXP_BIAS - F16_EXP_BIAS) as u32) << 23) | (mant << 13),
    };
    f32::from_bits(bits)
}

/// Round an `f32` through binary16 storage.
#[inline]
pub fn round_f16(x: f32) -> f32 {
    decode_f16(encode_f16(x))
}
