//! Builds a small network, trains it by hand under a BF16 policy and checks
//! the master/shadow split after each step.

use bf16emu::kernels::{softmax_cross_entropy, ActivationKind};
use bf16emu::netgraph::{build_network, LayerSpec, Mode};
use bf16emu::numerics::RoundingMode;
use bf16emu::optim::{Sgd, SgdConfig};
use bf16emu::tensor::{QuantPolicy, RngStream, Tensor};
use rand::Rng;

/// Points in the unit square labelled by the XOR of their coordinate signs.
fn batch(rng: &mut RngStream, n: usize) -> (Tensor, Vec<usize>) {
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b): (f32, f32) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        x.extend([a, b]);
        labels.push(((a > 0.0) ^ (b > 0.0)) as usize);
    }
    (Tensor::new(vec![n, 2], x).unwrap(), labels)
}

fn main() {
    let specs = vec![
        LayerSpec::Dense { inputs: 2, outputs: 32, bias: true },
        LayerSpec::Activation(ActivationKind::Relu),
        LayerSpec::Dense { inputs: 32, outputs: 2, bias: true },
    ];
    let policy = QuantPolicy::bf16(RoundingMode::NearestEven);
    let mut net = build_network(&specs, &[2], policy, &RngStream::new(1, 0)).unwrap();
    let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.9, nesterov: true, ..SgdConfig::default() }).unwrap();
    println!("{} parameters", net.num_parameters());

    let mut rng = RngStream::new(1, 1);
    for step in 0..=300 {
        let (x, labels) = batch(&mut rng, 64);
        let (logits, tape) = net.forward(&x, Mode::Train).unwrap();
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        net.backward(tape, &dlogits).unwrap();
        opt.step(net.params_mut());
        net.refresh_shadows();
        if step % 50 == 0 {
            println!("step {step:>3}  loss {loss:.4}");
        }
    }

    let p = &net.params()[0];
    println!(
        "{}: master {} {:+.9}, shadow {} {:+.9}, bias {}",
        p.name,
        p.master.tag(),
        p.master.data()[0],
        p.shadow.tag(),
        p.shadow.data()[0],
        p.bias.as_ref().unwrap().tag()
    );

    let (x, labels) = batch(&mut rng, 1000);
    let (logits, _) = net.forward(&x, Mode::Eval).unwrap();
    let correct = logits.data().chunks(2).zip(&labels).filter(|(z, &l)| (z[1] > z[0]) as usize == l).count();
    println!("eval accuracy {:.3}", correct as f64 / labels.len() as f64);
}
