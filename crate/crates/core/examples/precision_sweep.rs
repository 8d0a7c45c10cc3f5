//! Runs one task under FP32, BF16-RNE and BF16-truncate and compares the
//! resulting metrics files.
//!
//! Usage: `precision_sweep [task] [out_dir]`

use std::path::PathBuf;

use bf16emu::harness::{compare_runs, run_sweep, write_comparison, ExperimentConfig, RunFiles, Task, Tolerances};
use bf16emu::numerics::{Precision, RoundingMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let task = match args.next().as_deref() {
        None => Task::LogisticCtr,
        Some(name) => *Task::ALL.iter().find(|t| t.name() == name).ok_or(format!("unknown task {name}"))?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/sweep".into()));

    let mut base = ExperimentConfig::for_task(task);
    base.out = out.join("fp32");
    let mut arms = vec![base.clone()];
    for rounding in [RoundingMode::NearestEven, RoundingMode::Truncate] {
        let mut arm = base.arm(Precision::Bf16, rounding, 1.0);
        arm.out = out.join(arm.arm_name());
        arms.push(arm);
    }
    let reports = run_sweep(&arms, true)?;
    for r in &reports {
        println!("{:<12} final loss {:.5}  {} {:.5}", r.arm, r.final_loss(), task.metric_name(), r.final_metric());
    }

    let paths: Vec<PathBuf> = arms.iter().map(|a| RunFiles::under(&a.out).metrics).collect();
    let summary = compare_runs(&paths, Tolerances::default())?;
    write_comparison(&summary, &out.join("compare"))?;
    println!();
    print!("{}", summary.report());
    Ok(())
}
