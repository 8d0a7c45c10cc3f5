//! Scalar conversions, rounding modes and format limits.

use bf16emu::harness::cli::limits_table;
use bf16emu::numerics::{bf16_to_f32, f32_to_bf16, f32_to_fp16, fp16_to_f32, RoundingMode};

fn main() {
    let values = [std::f32::consts::PI, 1.0 + 2f32.powi(-8), 1e-5, 65519.0, 3.0e38];
    println!("{:>14} {:>8} {:>14} {:>14} {:>14}", "x", "bits", "bf16 rne", "bf16 trunc", "fp16 rne");
    for x in values {
        let rne = f32_to_bf16(x, RoundingMode::NearestEven);
        let trunc = f32_to_bf16(x, RoundingMode::Truncate);
        let half = f32_to_fp16(x, RoundingMode::NearestEven);
        println!(
            "{x:>14e} {:08x} {:>14e} {:>14e} {:>14e}",
            x.to_bits(),
            bf16_to_f32(rne),
            bf16_to_f32(trunc),
            fp16_to_f32(half)
        );
    }
    println!();
    print!("{}", limits_table());
}
