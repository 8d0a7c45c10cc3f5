use super::{RoundingMode, SubnormalPolicy};

/// Raw IEEE-754 binary16 encoding: sign(1), exponent(5, bias 15), mantissa(10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Fp16Bits(u16);

impl Fp16Bits {
    pub const INFINITY: Fp16Bits = Fp16Bits(0x7C00);
    pub const NEG_INFINITY: Fp16Bits = Fp16Bits(0xFC00);
    pub const NAN: Fp16Bits = Fp16Bits(0x7E00);
    pub const MAX: Fp16Bits = Fp16Bits(0x7BFF);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Fp16Bits(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        fp16_to_f32(self)
    }
}

/// IEEE binary16 conversion with subnormal results.
#[inline]
pub fn f32_to_fp16(x: f32, mode: RoundingMode) -> Fp16Bits {
    f32_to_fp16_with(x, mode, SubnormalPolicy::Supported)
}

/// Narrows `x` to binary16.
///
/// `NearestEven` overflows to a signed infinity. `Truncate` rounds toward
/// zero, so finite inputs beyond the range saturate at ±65504. NaNs map to the
/// canonical quiet NaN of the same sign.
pub fn f32_to_fp16_with(x: f32, mode: RoundingMode, subnormals: SubnormalPolicy) -> Fp16Bits {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x7F_FFFF;

    if exp == 0xFF {
        return Fp16Bits(if man == 0 { sign | 0x7C00 } else { sign | 0x7E00 });
    }
    // Zero and every binary32 subnormal lie far below half the smallest
    // binary16 subnormal.
    if exp == 0 {
        return Fp16Bits(sign);
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1F {
        return Fp16Bits(match mode {
            RoundingMode::NearestEven => sign | 0x7C00,
            RoundingMode::Truncate => sign | 0x7BFF,
        });
    }

    let round_up = |kept: u32, rem: u32, half: u32| -> bool {
        match mode {
            RoundingMode::Truncate => false,
            RoundingMode::NearestEven => rem > half || (rem == half && kept & 1 == 1),
        }
    };

    let magnitude = if half_exp <= 0 {
        // Below 2^-25 everything rounds to zero, ties included.
        if half_exp < -10 {
            0
        } else {
            let significand = man | 0x80_0000;
            let shift = (14 - half_exp) as u32;
            let kept = significand >> shift;
            let rem = significand & ((1 << shift) - 1);
            let half = 1 << (shift - 1);
            // a carry out of the subnormal range lands on the smallest normal
            kept + round_up(kept, rem, half) as u32
        }
    } else {
        let kept = ((half_exp as u32) << 10) | (man >> 13);
        let rem = man & 0x1FFF;
        // carries into the exponent; 0x7BFF + 1 is infinity
        let rounded = kept + round_up(kept, rem, 0x1000) as u32;
        if mode == RoundingMode::Truncate {
            rounded.min(0x7BFF)
        } else {
            rounded
        }
    };

    if subnormals == SubnormalPolicy::FlushToZero && magnitude < 0x400 {
        return Fp16Bits(sign);
    }
    Fp16Bits(sign | magnitude as u16)
}

/// Exact widening of a binary16 value.
pub fn fp16_to_f32(h: Fp16Bits) -> f32 {
    let bits = h.0 as u32;
    let sign = (bits & 0x8000) << 16;
    let exp = (bits >> 10) & 0x1F;
    let man = bits & 0x3FF;
    match exp {
        0 => {
            // subnormal: man * 2^-24, exact in binary32
            let magnitude = man as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(sign | magnitude.to_bits())
        }
        0x1F => f32::from_bits(sign | 0x7F80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 127 - 15) << 23) | (man << 13)),
    }
}
