use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::Task;
use crate::tensor::{RngStream, Tensor};

const DATA_STREAM: u64 = 0xDA7A;

pub const SINE_STEPS: usize = 32;
pub const CTR_FEATURES: usize = 64;
pub const DIGIT_SIDE: usize = 8;
pub const DIGIT_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Same leading shape as the inputs.
    Values(Tensor),
    Binary(Vec<f32>),
}

impl Targets {
    pub fn gather(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Values(t) => Targets::Values(t.gather_rows(rows)),
            Targets::Binary(y) => Targets::Binary(rows.iter().map(|&r| y[r]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, rows: &[usize]) -> Dataset {
        Dataset { x: self.x.gather_rows(rows), targets: self.targets.gather(rows) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub eval: Dataset,
    /// Eval-set log loss of the generating probabilities (logistic-ctr only).
    pub bayes_log_loss: Option<f64>,
}

/// Default sizes: 4096/1024 samples, except lstm-sine (1024/256) and
/// logistic-ctr (16384/4096).
pub fn default_sizes(task: Task) -> (usize, usize) {
    match task {
        Task::MlpCircles | Task::ConvDigits => (4096, 1024),
        Task::LstmSine => (1024, 256),
        Task::LogisticCtr => (16384, 4096),
    }
}

pub fn gen_dataset(task: Task, seed: u64) -> TaskData {
    let (train, eval) = default_sizes(task);
    gen_dataset_sized(task, seed, train, eval)
}

/// Deterministic in `(task, seed, sizes)`. Train and eval sets come from
/// separate streams, so changing one size leaves the other set unchanged.
pub fn gen_dataset_sized(task: Task, seed: u64, train: usize, eval: usize) -> TaskData {
    let root = RngStream::new(seed, DATA_STREAM).derive(task as u64);
    let (mut tr, mut ev) = (root.derive(1), root.derive(2));
    match task {
        Task::MlpCircles => TaskData { train: circles(train, &mut tr), eval: circles(eval, &mut ev), bayes_log_loss: None },
        Task::ConvDigits => TaskData { train: digits(train, &mut tr), eval: digits(eval, &mut ev), bayes_log_loss: None },
        Task::LstmSine => TaskData { train: sine(train, &mut tr), eval: sine(eval, &mut ev), bayes_log_loss: None },
        Task::LogisticCtr => {
            let truth = CtrModel::new(&mut root.derive(3));
            let train = truth.sample(train, &mut tr).0;
            let (eval, bayes) = truth.sample(eval, &mut ev);
            TaskData { train, eval, bayes_log_loss: Some(bayes) }
        }
    }
}

fn normal(sigma: f32) -> Normal<f32> {
    Normal::new(0.0, sigma).expect("positive sigma")
}

/// Two noisy concentric rings of radius 0.5 and 1.0.
fn circles(n: usize, rng: &mut RngStream) -> Dataset {
    let noise = normal(0.15);
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_bool(0.5) as usize;
        let radius = if label == 0 { 0.5 } else { 1.0 };
        let theta = rng.random_range(0.0..std::f32::consts::TAU);
        x.push(radius * theta.cos() + noise.sample(rng));
        x.push(radius * theta.sin() + noise.sample(rng));
        labels.push(label);
    }
    Dataset { x: Tensor::new(vec![n, 2], x).expect("shape"), targets: Targets::Classes(labels) }
}

fn digit_prototype(class: usize, r: usize, c: usize) -> bool {
    match class {
        0 => (3..=4).contains(&r) && (1..=6).contains(&c),
        1 => (3..=4).contains(&c) && (1..=6).contains(&r),
        2 => r.abs_diff(c) <= 1 && (1..=6).contains(&r),
        _ => ((1..=6).contains(&r) && (c == 1 || c == 6)) || ((1..=6).contains(&c) && (r == 1 || r == 6)),
    }
}

/// Shifted, rescaled and noisy 8x8 strokes: bar, column, diagonal, box.
fn digits(n: usize, rng: &mut RngStream) -> Dataset {
    let noise = normal(0.7);
    let side = DIGIT_SIDE as i64;
    let mut x = Vec::with_capacity(n * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_range(0..DIGIT_CLASSES);
        let (dy, dx) = (rng.random_range(-1i64..=1), rng.random_range(-1i64..=1));
        let gain = rng.random_range(0.7f32..1.3);
        for r in 0..side {
            for c in 0..side {
                let (sr, sc) = (r - dy, c - dx);
                let on = (0..side).contains(&sr) && (0..side).contains(&sc) && digit_prototype(label, sr as usize, sc as usize);
                x.push(if on { gain } else { 0.0 } + noise.sample(rng));
            }
        }
        labels.push(label);
    }
    Dataset {
        x: Tensor::new(vec![n, 1, DIGIT_SIDE, DIGIT_SIDE], x).expect("shape"),
        targets: Targets::Classes(labels),
    }
}

/// Noisy sine inputs `[N, T, 1]` with clean next-value targets.
fn sine(n: usize, rng: &mut RngStream) -> Dataset {
    let noise = normal(0.1);
    let mut x = Vec::with_capacity(n * SINE_STEPS);
    let mut y = Vec::with_capacity(n * SINE_STEPS);
    for _ in 0..n {
        let amp = rng.random_range(0.5f32..1.0);
        let omega = rng.random_range(0.15f32..0.45);
        let phase = rng.random_range(0.0..std::f32::consts::TAU);
        let wave = |t: usize| amp * (omega * t as f32 + phase).sin();
        for t in 0..SINE_STEPS {
            x.push(wave(t) + noise.sample(rng));
            y.push(wave(t + 1));
        }
    }
    Dataset {
        x: Tensor::new(vec![n, SINE_STEPS, 1], x).expect("shape"),
        targets: Targets::Values(Tensor::new(vec![n, SINE_STEPS, 1], y).expect("shape")),
    }
}

/// Ground-truth logistic model over sparse binary features.
struct CtrModel {
    weights: Vec<f64>,
    bias: f64,
}

impl CtrModel {
    fn new(rng: &mut RngStream) -> Self {
        let w = normal(0.8);
        CtrModel { weights: (0..CTR_FEATURES).map(|_| w.sample(rng) as f64).collect(), bias: -1.0 }
    }

    /// Samples a dataset and the mean log loss of the true probabilities on it.
    fn sample(&self, n: usize, rng: &mut RngStream) -> (Dataset, f64) {
        let mut x = Vec::with_capacity(n * CTR_FEATURES);
        let mut y = Vec::with_capacity(n);
        let mut bayes = 0.0f64;
        for _ in 0..n {
            let mut z = self.bias;
            for w in &self.weights {
                let on = rng.random_bool(0.15);
                x.push(on as u8 as f32);
                if on {
                    z += w;
                }
            }
            let p = 1.0 / (1.0 + (-z).exp());
            let label = rng.random_bool(p);
            bayes -= if label { p.ln() } else { (1.0 - p).ln() };
            y.push(label as u8 as f32);
        }
        let data = Dataset { x: Tensor::new(vec![n, CTR_FEATURES], x).expect("shape"), targets: Targets::Binary(y) };
        (data, bayes / n as f64)
    }
}
