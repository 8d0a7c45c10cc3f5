//! Plain FP32 MLP trainer written with scalar loops only: dense layers with
//! bias, ReLU, softmax cross-entropy and Nesterov SGD. Reductions run in
//! ascending index order with one f32 accumulator.

use bf16emu::kernels::{softmax_cross_entropy, ActivationKind, GemmAccumOrder};
use bf16emu::netgraph::{build_network, LayerSpec, Mode, Network};
use bf16emu::optim::{Sgd, SgdConfig};
use bf16emu::tensor::{QuantPolicy, RngStream, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Dense {
    /// `[outputs][inputs]`, row-major.
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    pub inputs: usize,
    pub outputs: usize,
    vw: Vec<f32>,
    vb: Vec<f32>,
}

impl Dense {
    pub fn new(w: Vec<f32>, b: Vec<f32>, inputs: usize, outputs: usize) -> Self {
        Dense { vw: vec![0.0; w.len()], vb: vec![0.0; b.len()], w, b, inputs, outputs }
    }

    fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut y = vec![0.0f32; n * self.outputs];
        for i in 0..n {
            for j in 0..self.outputs {
                let mut acc = 0.0f32;
                for k in 0..self.inputs {
                    acc += x[i * self.inputs + k] * self.w[j * self.inputs + k];
                }
                y[i * self.outputs + j] = acc + self.b[j];
            }
        }
        y
    }

    /// Returns `(dx, dw, db)`.
    fn backward(&self, x: &[f32], dy: &[f32], n: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let (fi, fo) = (self.inputs, self.outputs);
        let mut dw = vec![0.0f32; fo * fi];
        for j in 0..fo {
            for k in 0..fi {
                let mut acc = 0.0f32;
                for i in 0..n {
                    acc += dy[i * fo + j] * x[i * fi + k];
                }
                dw[j * fi + k] = acc;
            }
        }
        let mut db = vec![0.0f32; fo];
        for i in 0..n {
            for j in 0..fo {
                db[j] += dy[i * fo + j];
            }
        }
        let mut dx = vec![0.0f32; n * fi];
        for i in 0..n {
            for k in 0..fi {
                let mut acc = 0.0f32;
                for j in 0..fo {
                    acc += dy[i * fo + j] * self.w[j * fi + k];
                }
                dx[i * fi + k] = acc;
            }
        }
        (dx, dw, db)
    }
}

fn nesterov(w: &mut [f32], v: &mut [f32], g: &[f32], lr: f32, mu: f32) {
    for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi - lr * gi;
        *wi = *wi + mu * *vi - lr * gi;
    }
}

fn relu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

fn relu_backward(x: &[f32], dy: &[f32]) -> Vec<f32> {
    x.iter().zip(dy).map(|(&v, &g)| g * if v > 0.0 { 1.0 } else { 0.0 }).collect()
}

/// Mean cross-entropy (accumulated in f64) and `(softmax - onehot) / n`.
fn cross_entropy(z: &[f32], labels: &[usize], c: usize) -> (f32, Vec<f32>) {
    let n = labels.len();
    let mut grad = vec![0.0f32; n * c];
    let mut total = 0.0f64;
    for i in 0..n {
        let row = &z[i * c..(i + 1) * c];
        let mut max = f32::NEG_INFINITY;
        for &v in row {
            max = max.max(v);
        }
        let mut denom = 0.0f32;
        for &v in row {
            denom += (v - max).exp();
        }
        total += ((denom.ln() + max) - row[labels[i]]) as f64;
        for k in 0..c {
            let p = (row[k] - max).exp() / denom;
            let onehot = if k == labels[i] { 1.0 } else { 0.0 };
            grad[i * c + k] = (p - onehot) / n as f32;
        }
    }
    ((total / n as f64) as f32, grad)
}

/// Everything one step produced, for bit comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub logits: Vec<u32>,
    pub loss: u32,
    pub dx: Vec<u32>,
    pub grads: Vec<Vec<u32>>,
    pub weights: Vec<Vec<u32>>,
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[derive(Debug, Clone)]
pub struct ReferenceMlp {
    pub layers: Vec<Dense>,
    pub lr: f32,
    pub momentum: f32,
}

impl ReferenceMlp {
    /// ReLU after every layer but the last.
    pub fn step(&mut self, x: &[f32], labels: &[usize]) -> StepTrace {
        let n = labels.len();
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(inputs.last().unwrap(), n);
            if l + 1 < self.layers.len() {
                inputs.push(relu(&z));
            }
            pre.push(z);
        }
        let logits = pre.last().unwrap().clone();
        let classes = self.layers.last().unwrap().outputs;
        let (loss, mut g) = cross_entropy(&logits, labels, classes);
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                g = relu_backward(&pre[l], &g);
            }
            let (dx, dw, db) = self.layers[l].backward(&inputs[l], &g, n);
            grads[2 * l] = dw;
            grads[2 * l + 1] = db;
            g = dx;
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            nesterov(&mut layer.w, &mut layer.vw, &grads[2 * l], self.lr, self.momentum);
            nesterov(&mut layer.b, &mut layer.vb, &grads[2 * l + 1], self.lr, self.momentum);
        }
        StepTrace {
            logits: bits(&logits),
            loss: loss.to_bits(),
            dx: bits(&g),
            grads: grads.iter().map(|v| bits(v)).collect(),
            weights: self.layers.iter().flat_map(|d| [bits(&d.w), bits(&d.b)]).collect(),
        }
    }
}

pub const WIDTHS: [usize; 4] = [2, 16, 16, 3];
pub const LR: f32 = 0.05;
pub const MOMENTUM: f32 = 0.9;

pub fn mlp_specs() -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for (l, pair) in WIDTHS.windows(2).enumerate() {
        specs.push(LayerSpec::Dense { inputs: pair[0], outputs: pair[1], bias: true });
        if l + 2 < WIDTHS.len() {
            specs.push(LayerSpec::Activation(ActivationKind::Relu));
        }
    }
    specs
}

/// A library network under `policy` and a reference copy of its initial
/// weights.
pub fn paired_models(seed: u64, policy: QuantPolicy) -> (Network, ReferenceMlp) {
    let mut net = build_network(&mlp_specs(), &[WIDTHS[0]], policy, &RngStream::new(seed, 1)).unwrap();
    net.set_accum_order(GemmAccumOrder::SequentialK);
    let layers = net
        .params()
        .iter()
        .zip(WIDTHS.windows(2))
        .map(|(p, pair)| Dense::new(p.master.data().to_vec(), p.bias.as_ref().unwrap().data().to_vec(), pair[0], pair[1]))
        .collect();
    (net, ReferenceMlp { layers, lr: LR, momentum: MOMENTUM })
}

pub fn library_step(net: &mut Network, opt: &mut Sgd, x: &Tensor, labels: &[usize]) -> StepTrace {
    let (logits, tape) = net.forward(x, Mode::Train).unwrap();
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels).unwrap();
    let dx = net.backward(tape, &dlogits).unwrap().dx;
    let grads =
        net.params().iter().flat_map(|p| [bits(p.grad.data()), bits(p.bias_grad.as_ref().unwrap().data())]).collect();
    opt.step(net.params_mut());
    net.refresh_shadows();
    StepTrace {
        logits: bits(logits.data()),
        loss: loss.to_bits(),
        dx: bits(dx.data()),
        grads,
        weights: net.params().iter().flat_map(|p| [bits(p.master.data()), bits(p.bias.as_ref().unwrap().data())]).collect(),
    }
}

/// Runs both paths for `steps` minibatches and returns the first step at
/// which their traces differ.
pub fn first_divergence(seed: u64, steps: usize, batch: usize, policy: QuantPolicy) -> Option<usize> {
    let (mut net, mut reference) = paired_models(seed, policy);
    let mut opt = Sgd::new(SgdConfig { lr: LR, momentum: MOMENTUM, nesterov: true, ..SgdConfig::default() }).unwrap();
    let mut rng = RngStream::new(seed, 2);
    for step in 0..steps {
        let x: Vec<f32> = (0..batch * WIDTHS[0]).map(|_| StandardNormal.sample(&mut rng)).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..WIDTHS[3])).collect();
        let lib = library_step(&mut net, &mut opt, &Tensor::new(vec![batch, WIDTHS[0]], x.clone()).unwrap(), &labels);
        let plain = reference.step(&x, &labels);
        if lib != plain {
            return Some(step);
        }
    }
    None
}
