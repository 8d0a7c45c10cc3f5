//! Small gradients under FP16 with and without loss scaling, next to BF16.

use bf16emu::harness::{train, ExperimentConfig, Task};
use bf16emu::numerics::{Precision, RoundingMode};

fn main() {
    let mut base = ExperimentConfig::for_task(Task::MlpCircles);
    base.epochs = 5;
    base.grad_prescale = 2f32.powi(-24);
    base.lr *= 2f32.powi(24);

    let arms = [
        ("fp32", base.clone()),
        ("fp16 S=1", base.arm(Precision::Fp16, RoundingMode::NearestEven, 1.0)),
        ("fp16 S=2^20", base.arm(Precision::Fp16, RoundingMode::NearestEven, 2f32.powi(20))),
        ("bf16 S=1", base.arm(Precision::Bf16, RoundingMode::NearestEven, 1.0)),
    ];
    println!("{:<12} {:>10} {:>10} {:>16}", "arm", "final loss", "underflow", "steps updated");
    for (name, cfg) in arms {
        let r = train(&cfg).unwrap();
        println!(
            "{name:<12} {:>10.5} {:>10.4} {:>9}/{}",
            r.final_loss(),
            r.last().grad_underflow_frac,
            r.steps_with_update,
            r.steps
        );
    }
}
