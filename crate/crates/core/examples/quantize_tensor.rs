//! Fake-quantizing a tensor and counting gradient underflow under a policy.

use bf16emu::numerics::{Precision, RoundingMode};
use bf16emu::tensor::{init_tensor, quantize_tensor, InitScheme, LayerClass, QuantPolicy, RngStream};

fn main() {
    let mut rng = RngStream::new(7, 0);
    let w = init_tensor(&[4, 4], InitScheme::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
    let q = quantize_tensor(&w, Precision::Bf16, RoundingMode::NearestEven);
    println!("tag {} -> {}", w.tag(), q.tag());
    for (a, b) in w.data().iter().zip(q.data()).take(4) {
        println!("  {a:+.9} -> {b:+.9}  (rel err {:.2e})", ((a - b) / a).abs());
    }

    let grads = w.map(|g| g * 1e-7);
    for policy in [QuantPolicy::bf16(RoundingMode::NearestEven), QuantPolicy::fp16(RoundingMode::NearestEven)] {
        let enabled = policy.rule(LayerClass::InnerProduct).error_grads;
        let (_, stats) = policy.quantize_grad(enabled, &grads);
        println!("{}: {}/{} gradients flushed", policy.precision, stats.flushed, stats.nonzero);
    }
}
