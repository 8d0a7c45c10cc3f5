//! Scalar 16-bit floating point formats and their conversions to and from `f32`.
//!
//! Two storage formats are modelled bit-exactly:
//!
//! * [`Bf16Bits`]: 1 sign, 8 exponent and 7 mantissa bits. Its encoding is the
//!   upper half of the binary32 encoding of the same value, so widening is a
//!   shift and narrowing is a rounding of the low 16 bits.
//! * [`Fp16Bits`]: IEEE-754 binary16 with subnormals, used as the narrow-range
//!   reference format.
//!
//! All values remain `f32` during computation. [`quantize_scalar`] projects an
//! `f32` onto the set of values representable in the chosen format.

mod bf16;
mod fp16;

use std::fmt;

pub use bf16::{bf16_to_f32, f32_to_bf16, f32_to_bf16_with, Bf16Bits};
pub use fp16::{f32_to_fp16, f32_to_fp16_with, fp16_to_f32, Fp16Bits};

/// Rounding applied when narrowing an `f32` to a 16-bit format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RoundingMode {
    /// Round to nearest, ties to an even mantissa LSB.
    #[default]
    NearestEven,
    /// Drop the excess mantissa bits (round toward zero).
    Truncate,
}

impl RoundingMode {
    pub fn name(self) -> &'static str {
        match self {
            RoundingMode::NearestEven => "rne",
            RoundingMode::Truncate => "trunc",
        }
    }
}

impl fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RoundingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rne" | "nearest" | "nearest-even" => Ok(RoundingMode::NearestEven),
            "trunc" | "truncate" => Ok(RoundingMode::Truncate),
            other => Err(format!("unknown rounding mode `{other}` (expected rne|trunc)")),
        }
    }
}

/// How a conversion treats results that land in the subnormal range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubnormalPolicy {
    Supported,
    FlushToZero,
}

/// Precision tag carried by tensors and quantization policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    #[default]
    Fp32,
    Bf16,
    Fp16,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Bf16 => "bf16",
            Precision::Fp16 => "fp16",
        }
    }

    /// Default format description for this tag.
    pub fn format(self) -> FormatSpec {
        match self {
            Precision::Fp32 => FormatSpec::FP32,
            Precision::Bf16 => FormatSpec::BF16,
            Precision::Fp16 => FormatSpec::FP16,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Precision::Fp32 => 0,
            Precision::Bf16 => 1,
            Precision::Fp16 => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Precision::Fp32),
            1 => Some(Precision::Bf16),
            2 => Some(Precision::Fp16),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(Precision::Fp32),
            "bf16" | "bfloat16" => Ok(Precision::Bf16),
            "fp16" | "f16" => Ok(Precision::Fp16),
            other => Err(format!("unknown precision `{other}` (expected fp32|bf16|fp16)")),
        }
    }
}

/// Bit-level description of one of the three supported formats.
///
/// Only the FP32, FP16 and BF16 layouts can be constructed; the subnormal
/// policy is the single adjustable field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FormatSpec {
    precision: Precision,
    exponent_bits: u32,
    mantissa_bits: u32,
    bias: i32,
    subnormal_policy: SubnormalPolicy,
}

impl FormatSpec {
    pub const FP32: FormatSpec = FormatSpec {
        precision: Precision::Fp32,
        exponent_bits: 8,
        mantissa_bits: 23,
        bias: 127,
        subnormal_policy: SubnormalPolicy::Supported,
    };

    pub const FP16: FormatSpec = FormatSpec {
        precision: Precision::Fp16,
        exponent_bits: 5,
        mantissa_bits: 10,
        bias: 15,
        subnormal_policy: SubnormalPolicy::Supported,
    };

    /// BF16 flushes subnormal results by default.
    pub const BF16: FormatSpec = FormatSpec {
        precision: Precision::Bf16,
        exponent_bits: 8,
        mantissa_bits: 7,
        bias: 127,
        subnormal_policy: SubnormalPolicy::FlushToZero,
    };

    pub const fn with_subnormal_policy(mut self, policy: SubnormalPolicy) -> Self {
        self.subnormal_policy = policy;
        self
    }

    pub const fn precision(&self) -> Precision {
        self.precision
    }

    pub const fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    /// Explicit mantissa bits, not counting the hidden bit.
    pub const fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    pub const fn bias(&self) -> i32 {
        self.bias
    }

    pub const fn subnormal_policy(&self) -> SubnormalPolicy {
        self.subnormal_policy
    }
}

/// Representable range of a format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatLimits {
    pub max_normal: f32,
    pub min_normal: f32,
    /// `None` when the format flushes subnormals.
    pub min_subnormal: Option<f32>,
    /// Distance from 1.0 to the next representable value.
    pub epsilon: f32,
}

/// Computes the limits of `spec` from its exponent and mantissa widths alone.
pub fn format_limits(spec: FormatSpec) -> FormatLimits {
    let m = spec.mantissa_bits as i32;
    let emax = (1i32 << spec.exponent_bits) - 2 - spec.bias;
    let emin = 1 - spec.bias;
    let max_normal = (2.0 - 2f64.powi(-m)) * 2f64.powi(emax);
    let min_normal = 2f64.powi(emin);
    let min_subnormal = match spec.subnormal_policy {
        SubnormalPolicy::Supported => Some(2f64.powi(emin - m) as f32),
        SubnormalPolicy::FlushToZero => None,
    };
    FormatLimits {
        max_normal: max_normal as f32,
        min_normal: min_normal as f32,
        min_subnormal,
        epsilon: 2f64.powi(-m) as f32,
    }
}

/// Projects `x` onto the values representable in `spec` under `mode`.
///
/// The result is an `f32` carrying exactly the precision and range of the
/// target format. FP32 is the identity.
#[inline]
pub fn quantize_scalar(x: f32, spec: FormatSpec, mode: RoundingMode) -> f32 {
    match spec.precision {
        Precision::Fp32 => x,
        Precision::Bf16 => bf16_to_f32(f32_to_bf16_with(x, mode, spec.subnormal_policy)),
        Precision::Fp16 => fp16_to_f32(f32_to_fp16_with(x, mode, spec.subnormal_policy)),
    }
}

/// IEEE class of an encoded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloatClass {
    Zero,
    Subnormal,
    Normal,
    Infinite,
    NaN,
}

pub trait Classify {
    fn classify(&self) -> FloatClass;
}

fn classify_fields(exponent: u32, mantissa: u32, exponent_max: u32) -> FloatClass {
    match (exponent, mantissa) {
        (0, 0) => FloatClass::Zero,
        (0, _) => FloatClass::Subnormal,
        (e, 0) if e == exponent_max => FloatClass::Infinite,
        (e, _) if e == exponent_max => FloatClass::NaN,
        _ => FloatClass::Normal,
    }
}

impl Classify for f32 {
    fn classify(&self) -> FloatClass {
        let bits = self.to_bits();
        classify_fields((bits >> 23) & 0xFF, bits & 0x7F_FFFF, 0xFF)
    }
}

impl Classify for Bf16Bits {
    fn classify(&self) -> FloatClass {
        let bits = self.to_bits() as u32;
        classify_fields((bits >> 7) & 0xFF, bits & 0x7F, 0xFF)
    }
}

impl Classify for Fp16Bits {
    fn classify(&self) -> FloatClass {
        let bits = self.to_bits() as u32;
        classify_fields((bits >> 10) & 0x1F, bits & 0x3FF, 0x1F)
    }
}

/// Convenience wrapper over [`Classify::classify`].
pub fn classify<T: Classify>(value: T) -> FloatClass {
    value.classify()
}
