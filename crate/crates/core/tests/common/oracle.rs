//! Reference rounding built on exact integer arithmetic.
//!
//! A finite `f32` is decoded into `±M · 2^E` with integer `M`, and rounded onto
//! the grid of a target format described only by its precision and exponent
//! range. No bit tricks of the implementation under test are reused.

#![allow(dead_code)]

use bf16emu::numerics::RoundingMode;

#[derive(Debug, Clone, Copy)]
pub struct Target {
    /// Significand bits including the hidden bit.
    pub precision: u32,
    /// Exponent of the smallest normal.
    pub emin: i32,
    /// Exponent of the largest normal.
    pub emax: i32,
    /// Flush results below the smallest normal to signed zero.
    pub flush: bool,
}

pub const BF16: Target = Target { precision: 8, emin: -126, emax: 127, flush: false };
pub const BF16_FTZ: Target = Target { precision: 8, emin: -126, emax: 127, flush: true };
pub const FP16: Target = Target { precision: 11, emin: -14, emax: 15, flush: false };

/// Oracle result: NaN, or an exactly rounded value held in an `f64`.
pub fn round(x: f32, target: Target, mode: RoundingMode) -> f64 {
    let bits = x.to_bits();
    let negative = bits >> 31 == 1;
    let signed = |v: f64| if negative { -v } else { v };
    let exp_field = ((bits >> 23) & 0xFF) as i32;
    let frac = (bits & 0x7F_FFFF) as u64;

    if exp_field == 0xFF {
        return if frac == 0 { signed(f64::INFINITY) } else { f64::NAN };
    }
    let (m, e) = if exp_field == 0 { (frac, -149) } else { (frac | 1 << 23, exp_field - 150) };
    if m == 0 {
        return signed(0.0);
    }

    // |x| = m * 2^e, binade exponent of x:
    let msb = 63 - m.leading_zeros() as i32;
    let binade = msb + e;
    let quantum_exp = binade.max(target.emin) - (target.precision as i32 - 1);

    // k = m * 2^(e - quantum_exp), split into integer part and remainder.
    let (mut k, rem_cmp_half) = if e >= quantum_exp {
        ((m as u128) << (e - quantum_exp), std::cmp::Ordering::Less)
    } else {
        let shift = (quantum_exp - e) as u32;
        if shift >= 100 {
            (0u128, std::cmp::Ordering::Less)
        } else {
            let m = m as u128;
            let k = m >> shift;
            let rem = m - (k << shift);
            let half = 1u128 << (shift - 1);
            (k, rem.cmp(&half))
        }
    };
    if mode == RoundingMode::NearestEven {
        use std::cmp::Ordering::*;
        match rem_cmp_half {
            Greater => k += 1,
            Equal if k & 1 == 1 => k += 1,
            _ => {}
        }
    }

    let value = k as f64 * 2f64.powi(quantum_exp);
    let max_finite = (2.0 - 2f64.powi(1 - target.precision as i32)) * 2f64.powi(target.emax);
    let value = if value > max_finite {
        match mode {
            RoundingMode::NearestEven => f64::INFINITY,
            RoundingMode::Truncate => max_finite,
        }
    } else {
        value
    };
    let value = if target.flush && value < 2f64.powi(target.emin) { 0.0 } else { value };
    signed(value)
}

/// True when an implementation result (already widened to `f32`) matches
/// the oracle bit for bit, with any NaN matching NaN.
pub fn matches(result: f32, oracle: f64) -> bool {
    if oracle.is_nan() {
        return result.is_nan();
    }
    (result as f64).to_bits() == oracle.to_bits()
}

/// Structured sweep: every exponent, both signs, low-16 patterns at the
/// rounding boundaries, and a few mantissa-high patterns.
pub fn structured_sweep() -> Vec<u32> {
    let lows = [0x0000u32, 0x7FFF, 0x8000, 0x8001, 0xFFFF];
    let highs = [0x00u32, 0x01, 0x3F, 0x40, 0x7E, 0x7F];
    let mut out = Vec::new();
    for sign in [0u32, 1] {
        for exp in 0..=255u32 {
            for &hi in &highs {
                for &lo in &lows {
                    out.push(sign << 31 | exp << 23 | hi << 16 | lo);
                }
            }
        }
    }
    out
}

/// Binary16 rounding boundaries: low-13-bit patterns for exponents around the
/// binary16 range.
pub fn fp16_sweep() -> Vec<u32> {
    let lows = [0x0000u32, 0x0FFF, 0x1000, 0x1001, 0x1FFF];
    let highs = [0x000u32, 0x001, 0x1FF, 0x200, 0x3FE, 0x3FF];
    let mut out = Vec::new();
    for sign in [0u32, 1] {
        for exp in 90..=150u32 {
            for &hi in &highs {
                for &lo in &lows {
                    out.push(sign << 31 | exp << 23 | hi << 13 | lo);
                }
            }
        }
    }
    out
}
