use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::kernels::GemmAccumOrder;
use crate::numerics::{Precision, RoundingMode, SubnormalPolicy};
use crate::optim::is_power_of_two;
use crate::tensor::{LayerClass, QuantPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    MlpCircles,
    ConvDigits,
    LstmSine,
    LogisticCtr,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::MlpCircles, Task::ConvDigits, Task::LstmSine, Task::LogisticCtr];

    pub fn name(self) -> &'static str {
        match self {
            Task::MlpCircles => "mlp-circles",
            Task::ConvDigits => "conv-digits",
            Task::LstmSine => "lstm-sine",
            Task::LogisticCtr => "logistic-ctr",
        }
    }

    /// Name of the eval metric column's meaning.
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::MlpCircles | Task::ConvDigits => "accuracy",
            Task::LstmSine => "mse",
            Task::LogisticCtr => "log_loss",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL.into_iter().find(|t| t.name() == s.trim()).ok_or_else(|| format!("unknown task `{}`", s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantField {
    Weights,
    Activations,
    ErrorGrads,
}

impl QuantField {
    fn name(self) -> &'static str {
        match self {
            QuantField::Weights => "weights",
            QuantField::Activations => "activations",
            QuantField::ErrorGrads => "error_grads",
        }
    }
}

/// Everything that defines a training run.
///
/// Precision arms of one experiment share every field except `precision`,
/// `rounding`, `loss_scale` and `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub precision: Precision,
    pub rounding: RoundingMode,
    pub loss_scale: f32,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub momentum: f32,
    pub nesterov: bool,
    pub weight_decay: f32,
    pub warmup_steps: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Power of two applied to the loss gradient in every arm.
    pub grad_prescale: f32,
    pub accum_order: GemmAccumOrder,
    /// BF16 subnormal handling; FP16 always keeps subnormals.
    pub bf16_subnormals: SubnormalPolicy,
    pub quant_overrides: Vec<(LayerClass, QuantField, bool)>,
    pub train_size: usize,
    pub eval_size: usize,
    /// Width of the task's model (hidden units or first conv channels).
    pub hidden: usize,
    pub bn_running_stats: bool,
    /// Record elapsed time in `wall_ms`; off keeps the CSV reproducible.
    pub wall_clock: bool,
    pub out: PathBuf,
}

/// Keys that may differ between the arms of one experiment.
pub const ARM_KEYS: [&str; 4] = ["precision", "rounding", "loss_scale", "out"];

impl ExperimentConfig {
    /// Defaults for `task`.
    pub fn for_task(task: Task) -> Self {
        let base = ExperimentConfig {
            task,
            precision: Precision::Fp32,
            rounding: RoundingMode::NearestEven,
            loss_scale: 1.0,
            seed: 1,
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            lr: 0.05,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.0,
            warmup_steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_prescale: 1.0,
            accum_order: GemmAccumOrder::SequentialK,
            bf16_subnormals: SubnormalPolicy::FlushToZero,
            quant_overrides: Vec::new(),
            train_size: 4096,
            eval_size: 1024,
            hidden: 64,
            bn_running_stats: false,
            wall_clock: false,
            out: PathBuf::from("runs").join(task.name()),
        };
        match task {
            Task::MlpCircles => base,
            Task::ConvDigits => ExperimentConfig { epochs: 20, lr: 0.005, hidden: 8, ..base },
            Task::LstmSine => ExperimentConfig {
                epochs: 20,
                optimizer: OptimizerKind::Adam,
                lr: 0.01,
                momentum: 0.0,
                nesterov: false,
                train_size: 1024,
                eval_size: 256,
                hidden: 16,
                ..base
            },
            Task::LogisticCtr => ExperimentConfig {
                epochs: 10,
                batch_size: 64,
                lr: 0.05,
                train_size: 16384,
                eval_size: 4096,
                hidden: 1,
                ..base
            },
        }
    }

    /// Parses `key = value` text over the defaults of its `task` key
    /// (mlp-circles when absent). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if seen.insert(key.clone(), n + 1).is_some() {
                return Err(HarnessError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            pairs.push((key, value));
        }
        let task = match pairs.iter().find(|(k, _)| k == "task") {
            Some((_, v)) => v.parse().map_err(HarnessError::Config)?,
            None => Task::MlpCircles,
        };
        let mut cfg = Self::for_task(task);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one override. Changing `task` keeps the other fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
            v.parse().map_err(|_| HarnessError::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool, HarnessError> {
            match v {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(HarnessError::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
            }
        }
        let cfg_err = HarnessError::Config;
        match key {
            "task" => self.task = value.parse().map_err(cfg_err)?,
            "precision" => self.precision = value.parse().map_err(cfg_err)?,
            "rounding" => self.rounding = value.parse().map_err(cfg_err)?,
            "loss_scale" => self.loss_scale = parse_scale(value)?,
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(cfg_err(format!("unknown optimizer `{value}`"))),
                }
            }
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "nesterov" => self.nesterov = flag(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "grad_prescale" => self.grad_prescale = parse_scale(value)?,
            "accum_order" => {
                self.accum_order = match value {
                    "sequential" => GemmAccumOrder::SequentialK,
                    "paired" => GemmAccumOrder::PairedK,
                    _ => return Err(cfg_err(format!("unknown accumulation order `{value}`"))),
                }
            }
            "subnormals" => {
                self.bf16_subnormals = match value {
                    "ftz" => SubnormalPolicy::FlushToZero,
                    "supported" => SubnormalPolicy::Supported,
                    _ => return Err(cfg_err(format!("unknown subnormal policy `{value}`"))),
                }
            }
            "train_size" => self.train_size = num(key, value)?,
            "eval_size" => self.eval_size = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "bn_running_stats" => self.bn_running_stats = flag(key, value)?,
            "wall_clock" => self.wall_clock = flag(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => {
                let parts: Vec<&str> = key.split('.').collect();
                let ["quant", class, field] = parts[..] else {
                    return Err(cfg_err(format!("unknown key `{key}`")));
                };
                let class: LayerClass = class.parse().map_err(cfg_err)?;
                let field = [QuantField::Weights, QuantField::Activations, QuantField::ErrorGrads]
                    .into_iter()
                    .find(|f| f.name() == field)
                    .ok_or_else(|| cfg_err(format!("unknown quantization flag `{field}`")))?;
                let on = flag(key, value)?;
                self.quant_overrides.retain(|&(c, f, _)| (c, f) != (class, field));
                self.quant_overrides.push((class, field, on));
            }
        }
        Ok(())
    }

    /// Resolved `key = value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("task".into(), self.task.name().into()),
            ("precision".into(), self.precision.name().into()),
            ("rounding".into(), self.rounding.name().into()),
            ("loss_scale".into(), self.loss_scale.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("optimizer".into(), if self.optimizer == OptimizerKind::Sgd { "sgd" } else { "adam" }.into()),
            ("lr".into(), self.lr.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("nesterov".into(), self.nesterov.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("warmup_steps".into(), self.warmup_steps.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("grad_prescale".into(), self.grad_prescale.to_string()),
            (
                "accum_order".into(),
                if self.accum_order == GemmAccumOrder::SequentialK { "sequential" } else { "paired" }.into(),
            ),
            (
                "subnormals".into(),
                if self.bf16_subnormals == SubnormalPolicy::FlushToZero { "ftz" } else { "supported" }.into(),
            ),
            ("train_size".into(), self.train_size.to_string()),
            ("eval_size".into(), self.eval_size.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("bn_running_stats".into(), self.bn_running_stats.to_string()),
            ("wall_clock".into(), self.wall_clock.to_string()),
            ("out".into(), self.out.display().to_string()),
        ];
        for &(class, field, on) in &self.quant_overrides {
            out.push((format!("quant.{}.{}", class.name(), field.name()), on.to_string()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if !is_power_of_two(self.loss_scale) {
            return err(format!("loss_scale {} is not a power of two", self.loss_scale));
        }
        if self.precision != Precision::Fp16 && self.loss_scale != 1.0 {
            return err(format!("loss scaling is only allowed with fp16; {} runs use loss_scale = 1", self.precision));
        }
        if !is_power_of_two(self.grad_prescale) {
            return err(format!("grad_prescale {} is not a power of two", self.grad_prescale));
        }
        if self.batch_size == 0 || self.batch_size > self.train_size {
            return err(format!("batch_size {} must be in 1..={}", self.batch_size, self.train_size));
        }
        if self.eval_size == 0 || self.hidden == 0 {
            return err("eval_size and hidden must be positive".into());
        }
        self.optimizer_validate()
    }

    fn optimizer_validate(&self) -> Result<(), HarnessError> {
        let result = match self.optimizer {
            OptimizerKind::Sgd => self.sgd().validate(),
            OptimizerKind::Adam => self.adam().validate(),
        };
        result.map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn sgd(&self) -> crate::optim::SgdConfig {
        crate::optim::SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            nesterov: self.nesterov,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
        }
    }

    pub fn adam(&self) -> crate::optim::AdamConfig {
        crate::optim::AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Quantization policy implied by precision, rounding and overrides.
    pub fn policy(&self) -> QuantPolicy {
        let mut p = QuantPolicy::new(self.precision, self.rounding);
        if self.precision == Precision::Bf16 {
            p.subnormals = self.bf16_subnormals;
        }
        for &(class, field, on) in &self.quant_overrides {
            let rule = p.rule_mut(class);
            match field {
                QuantField::Weights => rule.weights = on,
                QuantField::Activations => rule.activations = on,
                QuantField::ErrorGrads => rule.error_grads = on,
            }
        }
        p
    }

    /// Short arm label such as `bf16-rne` or `fp16-rne-s2^20`.
    pub fn arm_name(&self) -> String {
        let mut name = match self.precision {
            Precision::Fp32 => "fp32".to_string(),
            p => format!("{}-{}", p.name(), self.rounding.name()),
        };
        if self.loss_scale != 1.0 {
            name.push_str(&format!("-s2^{}", self.loss_scale.log2() as i32));
        }
        name
    }

    /// Copy of this config as another precision arm, writing under
    /// `<out>/<arm name>`.
    pub fn arm(&self, precision: Precision, rounding: RoundingMode, loss_scale: f32) -> Self {
        let mut cfg = ExperimentConfig { precision, rounding, loss_scale, ..self.clone() };
        cfg.out = self.out.join(cfg.arm_name());
        cfg
    }

    /// Errors unless `other` differs from `self` only in arm keys.
    pub fn check_same_hyperparams(&self, other: &ExperimentConfig) -> Result<(), HarnessError> {
        let strip = |c: &ExperimentConfig| -> Vec<(String, String)> {
            c.to_pairs().into_iter().filter(|(k, _)| !ARM_KEYS.contains(&k.as_str())).collect()
        };
        let (a, b) = (strip(self), strip(other));
        if a == b {
            return Ok(());
        }
        let diff: Vec<String> = a
            .iter()
            .chain(&b)
            .filter(|kv| !(a.contains(kv) && b.contains(kv)))
            .map(|(k, _)| k.clone())
            .collect();
        Err(HarnessError::Config(format!("arms differ in hyper-parameters: {}", dedup(diff).join(", "))))
    }
}

fn dedup(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v.dedup();
    v
}

/// Accepts a plain number or `2^k`.
pub fn parse_scale(value: &str) -> Result<f32, HarnessError> {
    let v = value.trim();
    let parsed = match v.split_once('^') {
        Some(("2", k)) => k.trim().parse::<i32>().ok().map(|k| 2f32.powi(k)),
        Some(_) => None,
        None => v.parse::<f32>().ok(),
    };
    parsed.ok_or_else(|| HarnessError::Config(format!("cannot parse scale `{value}`")))
}
