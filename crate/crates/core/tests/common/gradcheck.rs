//! Central finite-difference checks for every backward kernel and for whole
//! networks under the FP32 policy.
//!
//! Each check projects the output onto a random direction `r` (accumulated in
//! f64), so the analytic gradient is the kernel's backward applied to `r`.
//! The error of one instance is `|g - g_fd| / max(|g|, |g_fd|)` over all
//! inputs and parameters of that instance.

use bf16emu::kernels::{
    activation_backward, activation_forward, batchnorm_backward, batchnorm_forward, bias_add, bias_add_channels,
    bias_grad, bias_grad_channels, conv2d_backward, conv2d_forward, dropout, dropout_backward, gemm, gemm_nt,
    gemm_tn, lstm_cell_backward, lstm_cell_forward, mse_loss, pool_backward, pool_forward, sigmoid_log_loss,
    softmax_cross_entropy, ActivationKind, BatchNormState, ConvSpec, GemmAccumOrder, LstmWeights, PoolKind, PoolSpec,
};
use bf16emu::netgraph::{build_network, LayerSpec, Mode};
use bf16emu::tensor::{QuantPolicy, RngStream, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const TOLERANCE: f64 = 1e-3;
pub const INSTANCES: usize = 20;
/// Relative finite-difference step: `h = STEP * max(1, |x|)`.
pub const STEP: f32 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.instances >= INSTANCES && self.worst <= TOLERANCE
    }
}

pub fn randn(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Central differences of `f` with respect to every element of `x`.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            let h = STEP * v.abs().max(1.0);
            let (up_x, down_x) = (v + h, v - h);
            probe.data_mut()[i] = up_x;
            let up = f(&probe);
            probe.data_mut()[i] = down_x;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (up_x as f64 - down_x as f64)
        })
        .collect()
}

/// Accumulates analytic/numeric pairs and reports the norm-wise error.
#[derive(Default)]
pub struct ErrorNorm {
    diff: f64,
    analytic: f64,
    numeric: f64,
}

impl ErrorNorm {
    pub fn add(&mut self, analytic: &Tensor, numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (&a, &n) in analytic.data().iter().zip(numeric) {
            let a = a as f64;
            self.diff += (a - n) * (a - n);
            self.analytic += a * a;
            self.numeric += n * n;
        }
    }

    pub fn value(&self) -> f64 {
        let scale = self.analytic.sqrt().max(self.numeric.sqrt());
        if scale == 0.0 {
            0.0
        } else {
            self.diff.sqrt() / scale
        }
    }
}

fn run(name: &'static str, seed: u64, mut instance: impl FnMut(&mut RngStream) -> f64) -> CheckResult {
    let root = RngStream::new(seed, 0x6C4E);
    let worst = (0..INSTANCES as u64).map(|i| instance(&mut root.derive(i))).fold(0.0, f64::max);
    CheckResult { name, instances: INSTANCES, worst }
}

fn order_for(rng: &mut RngStream) -> GemmAccumOrder {
    if rng.random_bool(0.5) {
        GemmAccumOrder::PairedK
    } else {
        GemmAccumOrder::SequentialK
    }
}

/// Values at least `gap` away from zero, for piecewise-linear kernels.
fn away_from_zero(shape: &[usize], gap: f32, rng: &mut RngStream) -> Tensor {
    randn(shape, rng).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

pub fn check_dense() -> CheckResult {
    run("dense (gemm + bias)", 1, |rng| {
        let (m, k, n) = (rng.random_range(1..6), rng.random_range(1..7), rng.random_range(1..6));
        let order = order_for(rng);
        let (a, b, bias, r) = (randn(&[m, k], rng), randn(&[k, n], rng), randn(&[n], rng), randn(&[m, n], rng));
        let f = |a: &Tensor, b: &Tensor, bias: &Tensor| dot(&bias_add(&gemm(a, b, order).unwrap(), bias).unwrap(), &r);
        let mut err = ErrorNorm::default();
        err.add(&gemm_nt(&r, &b, order).unwrap(), &numeric_grad(&a, |p| f(p, &b, &bias)));
        err.add(&gemm_tn(&a, &r, order).unwrap(), &numeric_grad(&b, |p| f(&a, p, &bias)));
        err.add(&bias_grad(&r), &numeric_grad(&bias, |p| f(&a, &b, p)));
        err.value()
    })
}

pub fn check_conv() -> CheckResult {
    run("conv2d", 2, |rng| {
        let spec = ConvSpec {
            in_channels: rng.random_range(1..4),
            out_channels: rng.random_range(1..4),
            kernel_h: rng.random_range(1..4),
            kernel_w: rng.random_range(1..4),
            stride: rng.random_range(1..3),
            padding: rng.random_range(0..2),
        };
        let n = rng.random_range(1..3);
        let h = rng.random_range(spec.kernel_h..spec.kernel_h + 4);
        let w = rng.random_range(spec.kernel_w..spec.kernel_w + 4);
        let order = order_for(rng);
        let x = randn(&[n, spec.in_channels, h, w], rng);
        let wt = randn(&spec.weight_shape(), rng);
        let bias = randn(&[spec.out_channels], rng);
        let y = conv2d_forward(&x, &wt, &spec, order).unwrap();
        let r = randn(y.shape(), rng);
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| {
            dot(&bias_add_channels(&conv2d_forward(x, wt, &spec, order).unwrap(), b).unwrap(), &r)
        };
        let (dx, dw) = conv2d_backward(&x, &wt, &r, &spec, order).unwrap();
        let mut err = ErrorNorm::default();
        err.add(&dx, &numeric_grad(&x, |p| f(p, &wt, &bias)));
        err.add(&dw, &numeric_grad(&wt, |p| f(&x, p, &bias)));
        err.add(&bias_grad_channels(&r), &numeric_grad(&bias, |p| f(&x, &wt, p)));
        err.value()
    })
}

fn check_pool(name: &'static str, kind: PoolKind, seed: u64) -> CheckResult {
    run(name, seed, |rng| {
        let spec = PoolSpec { window: rng.random_range(1..4), stride: rng.random_range(1..3) };
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (rng.random_range(spec.window..spec.window + 4), rng.random_range(spec.window..spec.window + 4));
        let len = n * c * h * w;
        // Distinct values 0.1 apart keep every max away from a tie.
        let mut values: Vec<f32> = (0..len).map(|i| (i as f32 - len as f32 / 2.0) * 0.1).collect();
        values.shuffle(rng);
        let x = Tensor::new(vec![n, c, h, w], values).unwrap();
        let (y, cache) = pool_forward(kind, &x, spec).unwrap();
        let r = randn(y.shape(), rng);
        let mut err = ErrorNorm::default();
        err.add(&pool_backward(&r, &cache).unwrap(), &numeric_grad(&x, |p| dot(&pool_forward(kind, p, spec).unwrap().0, &r)));
        err.value()
    })
}

pub fn check_max_pool() -> CheckResult {
    check_pool("max pool", PoolKind::Max, 3)
}

pub fn check_avg_pool() -> CheckResult {
    check_pool("avg pool", PoolKind::Avg, 4)
}

pub fn check_activations() -> CheckResult {
    let kinds = [ActivationKind::Relu, ActivationKind::LeakyRelu(0.1), ActivationKind::Sigmoid, ActivationKind::Tanh];
    run("activations", 5, |rng| {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let shape = [rng.random_range(1..5), rng.random_range(1..6)];
        let x = away_from_zero(&shape, 0.05, rng);
        let r = randn(&shape, rng);
        let mut err = ErrorNorm::default();
        let analytic = activation_backward(kind, &x, &r).unwrap();
        err.add(&analytic, &numeric_grad(&x, |p| dot(&activation_forward(kind, p), &r)));
        err.value()
    })
}

pub fn check_batchnorm() -> CheckResult {
    run("batchnorm", 6, |rng| {
        let c = rng.random_range(1..4);
        // With two samples per channel the output is +-gamma whatever x is,
        // leaving only eps-sized gradients; use at least three.
        let shape: Vec<usize> = if rng.random_bool(0.5) {
            vec![rng.random_range(3..7), c]
        } else {
            vec![rng.random_range(1..3), c, rng.random_range(2..4), rng.random_range(2..4)]
        };
        let x = randn(&shape, rng);
        let gamma = randn(&[c], rng);
        let beta = randn(&[c], rng);
        let r = randn(&shape, rng);
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| {
            let mut state = BatchNormState::new(c);
            state.gamma = g.data().to_vec();
            state.beta = b.data().to_vec();
            dot(&batchnorm_forward(x, &mut state).unwrap(), &r)
        };
        let mut state = BatchNormState::new(c);
        state.gamma = gamma.data().to_vec();
        state.beta = beta.data().to_vec();
        batchnorm_forward(&x, &mut state).unwrap();
        let (dx, dgamma, dbeta) = batchnorm_backward(&r, &x, &state).unwrap();
        let mut err = ErrorNorm::default();
        err.add(&dx, &numeric_grad(&x, |p| f(p, &gamma, &beta)));
        err.add(&dgamma, &numeric_grad(&gamma, |p| f(&x, p, &beta)));
        err.add(&dbeta, &numeric_grad(&beta, |p| f(&x, &gamma, p)));
        err.value()
    })
}

pub fn check_dropout() -> CheckResult {
    run("dropout", 7, |rng| {
        let shape = [rng.random_range(1..5), rng.random_range(1..8)];
        let p = rng.random_range(0.0f32..0.8);
        let x = randn(&shape, rng);
        let r = randn(&shape, rng);
        let mask_rng = rng.derive(9);
        let (_, mask) = dropout(&x, p, &mut mask_rng.clone()).unwrap();
        let mut err = ErrorNorm::default();
        err.add(
            &dropout_backward(&r, &mask, p).unwrap(),
            &numeric_grad(&x, |t| dot(&dropout(t, p, &mut mask_rng.clone()).unwrap().0, &r)),
        );
        err.value()
    })
}

pub fn check_lstm_cell() -> CheckResult {
    run("lstm cell", 8, |rng| {
        let (n, i, h) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let order = order_for(rng);
        let policy = QuantPolicy::fp32();
        let x = randn(&[n, i], rng);
        let h0 = randn(&[n, h], rng);
        let c0 = randn(&[n, h], rng);
        let weight = randn(&[4 * h, i + h], rng).map(|v| 0.5 * v);
        let bias = randn(&[4 * h], rng);
        let (rh, rc) = (randn(&[n, h], rng), randn(&[n, h], rng));
        let f = |x: &Tensor, h0: &Tensor, c0: &Tensor, w: &Tensor, b: &Tensor| {
            let weights = LstmWeights { weight: w.clone(), bias: b.clone() };
            let (h1, c1, _) = lstm_cell_forward(x, h0, c0, &weights, &policy, order).unwrap();
            dot(&h1, &rh) + dot(&c1, &rc)
        };
        let weights = LstmWeights { weight: weight.clone(), bias: bias.clone() };
        let (_, _, cache) = lstm_cell_forward(&x, &h0, &c0, &weights, &policy, order).unwrap();
        let g = lstm_cell_backward(&rh, &rc, &cache, &weights, &policy, order).unwrap();
        let mut err = ErrorNorm::default();
        err.add(&g.dx, &numeric_grad(&x, |p| f(p, &h0, &c0, &weight, &bias)));
        err.add(&g.dh_prev, &numeric_grad(&h0, |p| f(&x, p, &c0, &weight, &bias)));
        err.add(&g.dc_prev, &numeric_grad(&c0, |p| f(&x, &h0, p, &weight, &bias)));
        err.add(&g.dweight, &numeric_grad(&weight, |p| f(&x, &h0, &c0, p, &bias)));
        err.add(&g.dbias, &numeric_grad(&bias, |p| f(&x, &h0, &c0, &weight, p)));
        err.value()
    })
}

pub fn check_losses() -> CheckResult {
    run("losses", 9, |rng| {
        let (n, c) = (rng.random_range(1..6), rng.random_range(2..5));
        let mut err = ErrorNorm::default();
        match rng.random_range(0..3) {
            0 => {
                let logits = randn(&[n, c], rng);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
                let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
                err.add(&g, &numeric_grad(&logits, |p| softmax_cross_entropy(p, &labels).unwrap().0 as f64));
            }
            1 => {
                let (pred, target) = (randn(&[n, c], rng), randn(&[n, c], rng));
                let (_, g) = mse_loss(&pred, &target).unwrap();
                err.add(&g, &numeric_grad(&pred, |p| mse_loss(p, &target).unwrap().0 as f64));
            }
            _ => {
                let logits = randn(&[n, 1], rng);
                let y: Vec<f32> = (0..n).map(|_| rng.random_bool(0.5) as u8 as f32).collect();
                let (_, g) = sigmoid_log_loss(&logits, &y).unwrap();
                err.add(&g, &numeric_grad(&logits, |p| sigmoid_log_loss(p, &y).unwrap().0 as f64));
            }
        }
        err.value()
    })
}

/// Networks whose forward pass is smooth in inputs and parameters.
fn network_case(kind: usize, rng: &mut RngStream) -> (Vec<LayerSpec>, Vec<usize>, usize) {
    let batch = rng.random_range(2..5);
    match kind {
        0 => {
            let (i, h) = (rng.random_range(1..5), rng.random_range(2..6));
            let specs = vec![
                LayerSpec::Dense { inputs: i, outputs: h, bias: true },
                LayerSpec::Activation(ActivationKind::Tanh),
                LayerSpec::BatchNorm { channels: h },
                LayerSpec::Dense { inputs: h, outputs: h, bias: false },
                LayerSpec::Activation(ActivationKind::Sigmoid),
                LayerSpec::EltwiseAdd { from: 2 },
                LayerSpec::Dense { inputs: h, outputs: 2, bias: true },
            ];
            (specs, vec![i], batch)
        }
        1 => {
            let c = rng.random_range(1..3);
            let f = rng.random_range(1..4);
            let conv = |cin, cout, k, pad| ConvSpec {
                in_channels: cin,
                out_channels: cout,
                kernel_h: k,
                kernel_w: k,
                stride: 1,
                padding: pad,
            };
            let specs = vec![
                LayerSpec::Conv2d { spec: conv(c, f, 3, 1), bias: true },
                LayerSpec::BatchNorm { channels: f },
                LayerSpec::Activation(ActivationKind::Tanh),
                LayerSpec::Pool { kind: PoolKind::Avg, spec: PoolSpec { window: 2, stride: 2 } },
                LayerSpec::Conv2d { spec: conv(f, 2, 2, 0), bias: false },
                LayerSpec::Activation(ActivationKind::Sigmoid),
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 2 * 2 * 2, outputs: 3, bias: true },
            ];
            (specs, vec![c, 6, 6], batch)
        }
        _ => {
            let (i, h, t) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5));
            let specs = vec![
                LayerSpec::Lstm { inputs: i, hidden: h },
                LayerSpec::Dense { inputs: h, outputs: 1, bias: true },
            ];
            (specs, vec![t, i], batch)
        }
    }
}

pub fn check_network() -> CheckResult {
    let mut case = 0usize;
    run("full network", 10, |rng| {
        let (specs, input_shape, batch) = network_case(case % 3, rng);
        case += 1;
        let mut net = build_network(&specs, &input_shape, QuantPolicy::fp32(), &rng.derive(1)).unwrap();
        let mut x_shape = vec![batch];
        x_shape.extend(&input_shape);
        let x = randn(&x_shape, rng);
        let (y, tape) = net.forward(&x, Mode::Train).unwrap();
        let r = randn(y.shape(), rng);
        let dx = net.backward(tape, &r).unwrap().dx;

        let mut probe = net.clone();
        let loss = |net: &mut bf16emu::netgraph::Network, x: &Tensor| dot(&net.forward(x, Mode::Train).unwrap().0, &r);
        let mut err = ErrorNorm::default();
        err.add(&dx, &numeric_grad(&x, |p| loss(&mut probe, p)));
        for k in 0..net.params().len() {
            let master = net.params()[k].master.clone();
            let numeric = numeric_grad(&master, |p| {
                probe.params_mut()[k].master = p.clone();
                probe.refresh_shadows();
                loss(&mut probe, &x)
            });
            probe.params_mut()[k].master = master;
            probe.refresh_shadows();
            err.add(&net.params()[k].grad, &numeric);
            if let Some(bias) = net.params()[k].bias.clone() {
                let numeric = numeric_grad(&bias, |p| {
                    probe.params_mut()[k].bias = Some(p.clone());
                    loss(&mut probe, &x)
                });
                probe.params_mut()[k].bias = Some(bias);
                err.add(net.params()[k].bias_grad.as_ref().unwrap(), &numeric);
            }
        }
        err.value()
    })
}

pub fn all_checks() -> Vec<CheckResult> {
    vec![
        check_dense(),
        check_conv(),
        check_max_pool(),
        check_avg_pool(),
        check_activations(),
        check_batchnorm(),
        check_dropout(),
        check_lstm_cell(),
        check_losses(),
        check_network(),
    ]
}
