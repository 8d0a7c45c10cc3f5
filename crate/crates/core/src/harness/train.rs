use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{ExperimentConfig, OptimizerKind, Task};
use super::data::{gen_dataset_sized, Dataset, Targets, CTR_FEATURES, DIGIT_CLASSES, DIGIT_SIDE, SINE_STEPS};
use super::HarnessError;
use crate::kernels::{mse_loss, sigmoid_log_loss, softmax_cross_entropy, ActivationKind, ConvSpec, PoolKind, PoolSpec};
use crate::netgraph::{build_network, LayerSpec, Mode, Network};
use crate::optim::{Adam, LossScaler, Optimizer, Sgd};
use crate::tensor::{dump_tensor, RngStream, Tensor, UnderflowStats};

pub const METRICS_HEADER: [&str; 6] = ["epoch", "iter", "loss", "eval_metric", "grad_underflow_frac", "wall_ms"];

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5AFF;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub iter: u64,
    pub loss: f32,
    pub eval_metric: f32,
    pub grad_underflow_frac: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_record(&self) -> [String; 6] {
        [
            self.epoch.to_string(),
            self.iter.to_string(),
            self.loss.to_string(),
            self.eval_metric.to_string(),
            self.grad_underflow_frac.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub arm: String,
    pub task: Task,
    pub rows: Vec<MetricsRow>,
    /// Iteration at which a non-finite loss stopped training.
    pub diverged_at: Option<u64>,
    pub steps: u64,
    /// Steps after which at least one master weight or bias changed bits.
    pub steps_with_update: u64,
    pub bayes_log_loss: Option<f64>,
}

impl RunReport {
    pub fn last(&self) -> &MetricsRow {
        self.rows.last().expect("at least the initial row")
    }

    pub fn final_loss(&self) -> f32 {
        self.last().loss
    }

    pub fn final_metric(&self) -> f32 {
        self.last().eval_metric
    }
}

/// Layer stack and per-sample input shape for a task.
pub fn task_model(task: Task, hidden: usize) -> (Vec<LayerSpec>, Vec<usize>) {
    use LayerSpec::*;
    let relu = Activation(ActivationKind::Relu);
    match task {
        Task::MlpCircles => (
            vec![
                Dense { inputs: 2, outputs: hidden, bias: true },
                relu.clone(),
                Dense { inputs: hidden, outputs: hidden, bias: true },
                relu,
                Dense { inputs: hidden, outputs: 2, bias: true },
            ],
            vec![2],
        ),
        Task::ConvDigits => {
            let (c1, c2) = (hidden, 2 * hidden);
            let pool = Pool { kind: PoolKind::Max, spec: PoolSpec { window: 2, stride: 2 } };
            let flat = c2 * (DIGIT_SIDE / 4) * (DIGIT_SIDE / 4);
            (
                vec![
                    Conv2d { spec: ConvSpec::square(1, c1, 3, 1, 1), bias: true },
                    relu.clone(),
                    pool.clone(),
                    Conv2d { spec: ConvSpec::square(c1, c2, 3, 1, 1), bias: true },
                    relu,
                    pool,
                    Flatten,
                    Dense { inputs: flat, outputs: DIGIT_CLASSES, bias: true },
                ],
                vec![1, DIGIT_SIDE, DIGIT_SIDE],
            )
        }
        Task::LstmSine => (
            vec![Lstm { inputs: 1, hidden }, Dense { inputs: hidden, outputs: 1, bias: true }],
            vec![SINE_STEPS, 1],
        ),
        Task::LogisticCtr => (vec![Dense { inputs: CTR_FEATURES, outputs: 1, bias: true }], vec![CTR_FEATURES]),
    }
}

/// Loss and its gradient with respect to the network output.
fn loss_and_grad(out: &Tensor, targets: &Targets) -> Result<(f32, Tensor), HarnessError> {
    Ok(match targets {
        Targets::Classes(labels) => softmax_cross_entropy(out, labels)?,
        Targets::Values(t) => mse_loss(out, t)?,
        Targets::Binary(y) => sigmoid_log_loss(out, y)?,
    })
}

/// Accuracy for classes, otherwise the (mean) loss itself.
fn eval_metric(out: &Tensor, targets: &Targets) -> Result<f64, HarnessError> {
    match targets {
        Targets::Classes(labels) => {
            let c = out.shape()[1];
            let correct = out
                .data()
                .chunks_exact(c)
                .zip(labels)
                .filter(|(row, &l)| {
                    let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                    best == l
                })
                .count();
            Ok(correct as f64 / labels.len() as f64)
        }
        _ => Ok(loss_and_grad(out, targets)?.0 as f64),
    }
}

/// Eval-mode pass over `set` in fixed chunks, returning sample-weighted
/// `(loss, metric)`.
fn evaluate(net: &mut Network, set: &Dataset) -> Result<(f32, f32), HarnessError> {
    let n = set.len();
    let (mut loss, mut metric) = (0.0f64, 0.0f64);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let rows: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let chunk = set.gather(&rows);
        let (out, _) = net.forward(&chunk.x, Mode::Eval)?;
        let w = rows.len() as f64;
        loss += loss_and_grad(&out, &chunk.targets)?.0 as f64 * w;
        metric += eval_metric(&out, &chunk.targets)? * w;
    }
    Ok(((loss / n as f64) as f32, (metric / n as f64) as f32))
}

fn snapshot(net: &Network) -> Vec<u32> {
    net.params()
        .iter()
        .flat_map(|p| p.master.data().iter().chain(p.bias.iter().flat_map(|b| b.data())))
        .map(|v| v.to_bits())
        .collect()
}

/// Builds the network for `cfg` with its policy and accumulation order.
pub fn build_for(cfg: &ExperimentConfig) -> Result<Network, HarnessError> {
    let (specs, input) = task_model(cfg.task, cfg.hidden);
    let mut net = build_network(&specs, &input, cfg.policy(), &RngStream::new(cfg.seed, INIT_STREAM))?;
    net.set_accum_order(cfg.accum_order);
    net.bn_running_stats = cfg.bn_running_stats;
    Ok(net)
}

/// Trains in memory; no files are written.
///
/// Rows: one for the initial evaluation (epoch 0, iter 0), then one per
/// epoch with the mean minibatch loss. A non-finite loss appends a row for
/// the failing iteration and stops the run.
pub fn train(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    train_model(cfg).map(|(report, _)| report)
}

/// [`train`], also returning the trained network.
pub fn train_model(cfg: &ExperimentConfig) -> Result<(RunReport, Network), HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let wall = |cfg: &ExperimentConfig| if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };
    let data = gen_dataset_sized(cfg.task, cfg.seed, cfg.train_size, cfg.eval_size);
    let mut net = build_for(cfg)?;
    let mut opt = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(cfg.sgd())?),
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.adam())?),
    };
    let scaler = LossScaler::new(cfg.loss_scale)?;

    let (loss0, _) = evaluate(&mut net, &data.train)?;
    let (_, metric0) = evaluate(&mut net, &data.eval)?;
    let mut report = RunReport {
        arm: cfg.arm_name(),
        task: cfg.task,
        rows: vec![MetricsRow { epoch: 0, iter: 0, loss: loss0, eval_metric: metric0, grad_underflow_frac: 0.0, wall_ms: wall(cfg) }],
        diverged_at: None,
        steps: 0,
        steps_with_update: 0,
        bayes_log_loss: data.bayes_log_loss,
    };

    let batches = data.train.len() / cfg.batch_size;
    let shuffle = RngStream::new(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs as u64 {
        order.shuffle(&mut shuffle.derive(epoch));
        let mut stats = UnderflowStats::default();
        let mut loss_sum = 0.0f64;
        for b in 0..batches {
            let batch = data.train.gather(&order[b * cfg.batch_size..(b + 1) * cfg.batch_size]);
            let (out, tape) = net.forward(&batch.x, Mode::Train)?;
            let (loss, grad) = loss_and_grad(&out, &batch.targets)?;
            if !loss.is_finite() {
                report.diverged_at = Some(report.steps);
                report.rows.push(MetricsRow {
                    epoch,
                    iter: report.steps,
                    loss,
                    eval_metric: f32::NAN,
                    grad_underflow_frac: stats.fraction(),
                    wall_ms: wall(cfg),
                });
                return Ok((report, net));
            }
            loss_sum += loss as f64;
            let prescale = cfg.grad_prescale;
            let grad = scaler.scale_loss(&grad.map(|g| g * prescale));
            stats.merge(net.backward(tape, &grad)?.underflow);
            scaler.unscale_grads(net.params_mut());
            let before = snapshot(&net);
            opt.step(net.params_mut());
            net.refresh_shadows();
            report.steps += 1;
            if snapshot(&net) != before {
                report.steps_with_update += 1;
            }
        }
        let (_, metric) = evaluate(&mut net, &data.eval)?;
        report.rows.push(MetricsRow {
            epoch,
            iter: report.steps,
            loss: (loss_sum / batches.max(1) as f64) as f32,
            eval_metric: metric,
            grad_underflow_frac: stats.fraction(),
            wall_ms: wall(cfg),
        });
    }
    Ok((report, net))
}

/// Writes the metrics CSV with the fixed header.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Dumps every master weight and bias plus a manifest of names and shapes.
pub fn dump_model(net: &Network, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("# name shape tag file\n");
    for p in net.params() {
        let mut entries = vec![("weight", &p.master)];
        if let Some(b) = &p.bias {
            entries.push(("bias", b));
        }
        for (suffix, t) in entries {
            let file = format!("{}.{suffix}.bin", p.name);
            dump_tensor(t, dir.join(&file))?;
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("{}.{suffix} {} {} {file}\n", p.name, shape.join("x"), t.tag()));
        }
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub config: PathBuf,
    pub info: PathBuf,
    pub model: PathBuf,
}

impl RunFiles {
    pub fn under(dir: &Path) -> Self {
        RunFiles {
            metrics: dir.join("metrics.csv"),
            config: dir.join("config.txt"),
            info: dir.join("run_info.txt"),
            model: dir.join("model"),
        }
    }
}

/// Trains and writes `metrics.csv`, the resolved `config.txt`,
/// `run_info.txt` and the final model dump under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let files = RunFiles::under(&cfg.out);
    fs::create_dir_all(&cfg.out)?;
    fs::write(&files.config, cfg.to_text())?;
    let (report, net) = train_model(cfg)?;
    write_metrics(&files.metrics, &report.rows)?;
    dump_model(&net, &files.model)?;
    let mut info = fs::File::create(&files.info)?;
    writeln!(info, "task = {}", report.task)?;
    writeln!(info, "arm = {}", report.arm)?;
    writeln!(info, "steps = {}", report.steps)?;
    writeln!(info, "steps_with_update = {}", report.steps_with_update)?;
    if let Some(at) = report.diverged_at {
        writeln!(info, "diverged_at = {at}")?;
    }
    if let Some(b) = report.bayes_log_loss {
        writeln!(info, "bayes_log_loss = {b}")?;
    }
    Ok(report)
}

/// Runs every arm on its own thread after checking that the arms differ
/// only in precision, rounding, loss scale and output directory.
pub fn run_sweep(arms: &[ExperimentConfig], write_files: bool) -> Result<Vec<RunReport>, HarnessError> {
    if let Some(first) = arms.first() {
        for arm in &arms[1..] {
            first.check_same_hyperparams(arm)?;
        }
        let outs: std::collections::BTreeSet<_> = arms.iter().map(|a| &a.out).collect();
        if write_files && outs.len() != arms.len() {
            return Err(HarnessError::Config("sweep arms must write to distinct directories".into()));
        }
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = arms
            .iter()
            .map(|cfg| s.spawn(move || if write_files { run_experiment(cfg) } else { train(cfg) }))
            .collect();
        handles.into_iter().map(|h| h.join().expect("arm thread panicked")).collect()
    })
}
