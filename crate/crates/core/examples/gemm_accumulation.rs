//! BF16-input GEMM with FP32 accumulation, compared against an f64 replay.

use bf16emu::kernels::{gemm, GemmAccumOrder};
use bf16emu::numerics::{Precision, RoundingMode};
use bf16emu::tensor::{init_tensor, quantize_tensor, InitScheme, RngStream};

fn main() {
    let (m, k, n) = (4, 256, 3);
    let mut rng = RngStream::new(3, 0);
    let unit = InitScheme::Uniform { low: -1.0, high: 1.0 };
    let a = init_tensor(&[m, k], unit, &mut rng).unwrap();
    let b = init_tensor(&[k, n], unit, &mut rng).unwrap();
    let (qa, qb) = (
        quantize_tensor(&a, Precision::Bf16, RoundingMode::NearestEven),
        quantize_tensor(&b, Precision::Bf16, RoundingMode::NearestEven),
    );
    for order in [GemmAccumOrder::SequentialK, GemmAccumOrder::PairedK] {
        let c = gemm(&qa, &qb, order).unwrap();
        let mut worst = 0f64;
        for i in 0..m {
            for j in 0..n {
                let exact: f64 = (0..k).map(|t| qa.data()[i * k + t] as f64 * qb.data()[t * n + j] as f64).sum();
                worst = worst.max((c.data()[i * n + j] as f64 - exact).abs() / exact.abs());
            }
        }
        println!("{order:?}: worst relative accumulation error {worst:.2e}");
    }
    let fp32 = gemm(&a, &b, GemmAccumOrder::SequentialK).unwrap();
    let bf16 = gemm(&qa, &qb, GemmAccumOrder::SequentialK).unwrap();
    println!("fp32 inputs c[0][0] = {:.6}, bf16 inputs c[0][0] = {:.6}", fp32.data()[0], bf16.data()[0]);
}
