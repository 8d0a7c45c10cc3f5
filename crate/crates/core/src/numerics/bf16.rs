use super::{RoundingMode, SubnormalPolicy};

/// Raw BFLOAT16 encoding: sign(1), exponent(8, bias 127), mantissa(7).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Bf16Bits(u16);

impl Bf16Bits {
    pub const ZERO: Bf16Bits = Bf16Bits(0x0000);
    pub const INFINITY: Bf16Bits = Bf16Bits(0x7F80);
    pub const NEG_INFINITY: Bf16Bits = Bf16Bits(0xFF80);
    pub const NAN: Bf16Bits = Bf16Bits(0x7FC0);
    pub const MAX: Bf16Bits = Bf16Bits(0x7F7F);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Bf16Bits(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        bf16_to_f32(self)
    }

    #[inline]
    pub const fn is_nan(self) -> bool {
        self.0 & 0x7F80 == 0x7F80 && self.0 & 0x007F != 0
    }
}

/// Narrows `x` to BFLOAT16, keeping subnormal results.
///
/// This is the pure bit-level conversion: `Truncate` keeps the top 16 bits of
/// the encoding and `NearestEven` rounds on the discarded low 16 bits. Use
/// [`f32_to_bf16_with`] to flush subnormal results.
#[inline]
pub fn f32_to_bf16(x: f32, mode: RoundingMode) -> Bf16Bits {
    f32_to_bf16_with(x, mode, SubnormalPolicy::Supported)
}

/// Narrows `x` to BFLOAT16 with an explicit subnormal policy.
///
/// NaNs whose upper half is already a NaN keep that upper half; NaNs with a
/// payload only in the low 16 bits become the canonical quiet NaN of the same
/// sign, so a NaN never turns into an infinity. Overflow under `NearestEven`
/// gives a signed infinity.
#[inline]
pub fn f32_to_bf16_with(x: f32, mode: RoundingMode, subnormals: SubnormalPolicy) -> Bf16Bits {
    let bits = x.to_bits();
    let upper = (bits >> 16) as u16;
    if x.is_nan() {
        if upper & 0x007F != 0 {
            return Bf16Bits(upper);
        }
        return Bf16Bits((upper & 0x8000) | 0x7FC0);
    }
    let rounded = match mode {
        RoundingMode::Truncate => upper,
        RoundingMode::NearestEven => {
            // Adding 0x7FFF plus the kept LSB carries into the upper half
            // exactly when the discarded half is above the tie, or at the tie
            // with an odd kept LSB. A carry out of the mantissa bumps the
            // exponent, which is also how overflow reaches 0x7F80.
            let lsb = (bits >> 16) & 1;
            ((bits + 0x7FFF + lsb) >> 16) as u16
        }
    };
    if subnormals == SubnormalPolicy::FlushToZero && rounded & 0x7F80 == 0 {
        return Bf16Bits(rounded & 0x8000);
    }
    Bf16Bits(rounded)
}

/// Exact widening: the BF16 pattern becomes the upper half of the `f32`.
#[inline]
pub fn bf16_to_f32(b: Bf16Bits) -> f32 {
    f32::from_bits((b.0 as u32) << 16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RoundingMode::*;

    fn rne(bits: u32) -> u16 {
        f32_to_bf16(f32::from_bits(bits), NearestEven).to_bits()
    }

    #[test]
    fn exact_values_pass_through() {
        assert_eq!(rne(0x3F80_0000), 0x3F80);
        assert_eq!(bf16_to_f32(Bf16Bits::from_bits(0x3F80)), 1.0);
        assert_eq!(bf16_to_f32(Bf16Bits::from_bits(0xC049)), -3.140625);
    }

    #[test]
    fn ties_go_to_even() {
        assert_eq!(rne(0x3F80_8000), 0x3F80);
        assert_eq!(rne(0x3F81_8000), 0x3F82);
        assert_eq!(rne(0x3F80_8001), 0x3F81);
        assert_eq!(rne(0x3F80_7FFF), 0x3F80);
    }

    #[test]
    fn overflow_and_truncation() {
        assert_eq!(rne(0x7F7F_FFFF), 0x7F80);
        assert_eq!(rne(0xFF7F_FFFF), 0xFF80);
        assert_eq!(f32_to_bf16(f32::MAX, Truncate).to_bits(), 0x7F7F);
        assert_eq!(f32_to_bf16(std::f32::consts::PI, Truncate).to_bits(), 0x4049);
        assert_eq!(f32_to_bf16(f32::INFINITY, NearestEven), Bf16Bits::INFINITY);
    }

    #[test]
    fn nan_handling() {
        // payload only in the low half: masking would give +inf
        let low_payload = f32::from_bits(0x7F80_0001);
        assert_eq!(f32_to_bf16(low_payload, Truncate).to_bits(), 0x7FC0);
        assert_eq!(f32_to_bf16(f32::from_bits(0xFF80_0001), NearestEven).to_bits(), 0xFFC0);
        // upper half already a NaN: kept
        assert_eq!(f32_to_bf16(f32::from_bits(0x7FC1_2345), NearestEven).to_bits(), 0x7FC1);
        assert_eq!(f32_to_bf16(f32::from_bits(0x7FFF_FFFF), NearestEven).to_bits(), 0x7FFF);
        assert!(f32_to_bf16(f32::NAN, Truncate).is_nan());
    }

    #[test]
    fn subnormals_flush_only_on_request() {
        let tiny = f32::from_bits(0x0001_0000);
        assert_eq!(f32_to_bf16(tiny, NearestEven).to_bits(), 0x0001);
        let flushed = f32_to_bf16_with(-tiny, NearestEven, SubnormalPolicy::FlushToZero);
        assert_eq!(flushed.to_bits(), 0x8000);
        // rounds up into the normal range: not flushed
        let edge = f32::from_bits(0x007F_FFFF);
        assert_eq!(f32_to_bf16_with(edge, NearestEven, SubnormalPolicy::FlushToZero).to_bits(), 0x0080);
    }

    #[test]
    fn signed_zero_preserved() {
        assert_eq!(f32_to_bf16(-0.0, NearestEven).to_bits(), 0x8000);
        assert_eq!(f32_to_bf16(-0.0, Truncate).to_bits(), 0x8000);
        assert_eq!(bf16_to_f32(Bf16Bits::from_bits(0x8000)).to_bits(), 0x8000_0000);
    }
}
