//! Experiment runner: synthetic tasks, precision arms, metrics and reports.

pub mod cli;
mod compare;
mod config;
mod data;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::kernels::KernelError;
use crate::netgraph::NetError;
use crate::optim::OptimError;
use crate::tensor::{DumpError, TensorError};

pub use compare::{compare_runs, read_metrics, write_comparison, ArmSummary, RunSummary, Tolerances};
pub use config::{parse_scale, ExperimentConfig, OptimizerKind, QuantField, Task, ARM_KEYS};
pub use data::{default_sizes, gen_dataset, gen_dataset_sized, Dataset, Targets, TaskData};
pub use train::{
    build_for, dump_model, run_experiment, run_sweep, task_model, train, train_model, write_metrics, MetricsRow,
    RunFiles, RunReport, METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error in {}: {detail}", path.display())]
    Schema { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}
