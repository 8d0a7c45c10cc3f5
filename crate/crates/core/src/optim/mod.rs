//! FP32 master-weight optimizers and static loss scaling.
//!
//! Optimizers read FP32 gradients and write FP32 masters only; shadows go
//! stale until the caller refreshes them.

use thiserror::Error;

use crate::netgraph::ParamSet;
use crate::numerics::Precision;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
    #[error("loss scale {0} is not a positive power of two")]
    NotPowerOfTwo(f32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub nesterov: bool,
    pub weight_decay: f32,
    /// Linear learning-rate warmup length in steps; 0 disables it.
    pub warmup_steps: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.01, momentum: 0.0, nesterov: false, weight_decay: 0.0, warmup_steps: 0 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OptimError::InvalidConfig(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(OptimError::InvalidConfig(format!("weight decay {} is negative", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(OptimError::InvalidConfig(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(OptimError::InvalidConfig(format!("eps {} must be positive", self.eps)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(OptimError::InvalidConfig(format!("weight decay {} is negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// Mutable views of one parameter set: `(master, grad, decayed)` pairs for
/// the weight and, if present, the bias. Bias is never decayed.
fn slots(p: &mut ParamSet) -> Vec<(&mut Tensor, &Tensor, bool)> {
    debug_assert_eq!(p.master.tag(), Precision::Fp32);
    debug_assert_eq!(p.grad.tag(), Precision::Fp32);
    let mut out = vec![(&mut p.master, &p.grad, true)];
    if let (Some(b), Some(g)) = (p.bias.as_mut(), p.bias_grad.as_ref()) {
        debug_assert_eq!(b.tag(), Precision::Fp32);
        out.push((b, g, false));
    }
    out
}

fn state_for(params: &mut [ParamSet]) -> Vec<Vec<f32>> {
    params.iter_mut().flat_map(|p| slots(p).into_iter().map(|(w, _, _)| vec![0.0f32; w.len()]).collect::<Vec<_>>()).collect()
}

/// Stochastic gradient descent with optional (Nesterov) momentum.
///
/// With decayed gradient `g' = g + λw`: `v ← μv − lr·g'`, then
/// `w ← w + μv − lr·g'` (Nesterov) or `w ← w + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocity: Vec<Vec<f32>>,
    steps: u64,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self, OptimError> {
        cfg.validate()?;
        Ok(Sgd { cfg, velocity: Vec::new(), steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate used by the next step.
    pub fn current_lr(&self) -> f32 {
        let w = self.cfg.warmup_steps;
        if w == 0 || self.steps >= w {
            self.cfg.lr
        } else {
            self.cfg.lr * (self.steps + 1) as f32 / w as f32
        }
    }

    pub fn step(&mut self, params: &mut [ParamSet]) {
        if self.velocity.is_empty() {
            self.velocity = state_for(params);
        }
        let (lr, mu, decay) = (self.current_lr(), self.cfg.momentum, self.cfg.weight_decay);
        let mut vel = self.velocity.iter_mut();
        for p in params.iter_mut() {
            for (w, g, decayed) in slots(p) {
                let v = vel.next().expect("parameter layout changed between steps");
                let lambda = if decayed { decay } else { 0.0 };
                for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                    let g = gi + lambda * *wi;
                    *vi = mu * *vi - lr * g;
                    if self.cfg.nesterov {
                        *wi = *wi + mu * *vi - lr * g;
                    } else {
                        *wi += *vi;
                    }
                }
            }
        }
        self.steps += 1;
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self, OptimError> {
        cfg.validate()?;
        Ok(Adam { cfg, m: Vec::new(), v: Vec::new(), t: 0 })
    }

    /// Steps taken so far.
    pub fn timestep(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [ParamSet]) {
        if self.m.is_empty() {
            self.m = state_for(params);
            self.v = state_for(params);
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let mut moments = self.m.iter_mut().zip(self.v.iter_mut());
        for p in params.iter_mut() {
            for (w, g, decayed) in slots(p) {
                let (m, v) = moments.next().expect("parameter layout changed between steps");
                let lambda = if decayed { c.weight_decay } else { 0.0 };
                for (((wi, &gi), mi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let g = gi + lambda * *wi;
                    *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                    *vi = c.beta2 * *vi + (1.0 - c.beta2) * (g * g);
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *wi -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                }
            }
        }
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [ParamSet]) {
        match self {
            Optimizer::Sgd(o) => o.step(params),
            Optimizer::Adam(o) => o.step(params),
        }
    }
}

/// Static loss scale, restricted to powers of two so that scaling and
/// unscaling are exact on finite FP32 values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScaler {
    scale: f32,
}

pub(crate) fn is_power_of_two(s: f32) -> bool {
    s.is_normal() && s > 0.0 && s.to_bits() & 0x007F_FFFF == 0
}

impl LossScaler {
    pub fn new(scale: f32) -> Result<Self, OptimError> {
        if !is_power_of_two(scale) || !is_power_of_two(1.0 / scale) {
            return Err(OptimError::NotPowerOfTwo(scale));
        }
        Ok(LossScaler { scale })
    }

    pub fn identity() -> Self {
        LossScaler { scale: 1.0 }
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    /// Multiplies the loss gradient by `S` before backward.
    pub fn scale_loss(&self, loss_grad: &Tensor) -> Tensor {
        let s = self.scale;
        loss_grad.map(|g| g * s)
    }

    /// Multiplies every FP32 weight and bias gradient by `1/S`.
    pub fn unscale_grads(&self, params: &mut [ParamSet]) {
        if self.scale == 1.0 {
            return;
        }
        let inv = 1.0 / self.scale;
        for p in params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= inv);
            if let Some(b) = p.bias_grad.as_mut() {
                b.data_mut().iter_mut().for_each(|g| *g *= inv);
            }
        }
    }
}

/// False if any gradient is infinite or NaN, e.g. after scaled overflow.
pub fn grads_finite(params: &[ParamSet]) -> bool {
    params.iter().all(|p| {
        p.grad.data().iter().all(|g| g.is_finite())
            && p.bias_grad.as_ref().is_none_or(|b| b.data().iter().all(|g| g.is_finite()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_network, LayerSpec, Network};
    use crate::tensor::{QuantPolicy, RngStream};

    fn scalar_net(w: f32, g: f32) -> Network {
        let specs = [LayerSpec::Dense { inputs: 1, outputs: 1, bias: false }];
        let mut net = build_network(&specs, &[1], QuantPolicy::fp32(), &RngStream::new(0, 0)).unwrap();
        net.params_mut()[0].master = Tensor::new(vec![1, 1], vec![w]).unwrap();
        net.params_mut()[0].grad = Tensor::new(vec![1, 1], vec![g]).unwrap();
        net
    }

    fn w(net: &Network) -> f32 {
        net.params()[0].master.data()[0]
    }

    #[test]
    fn plain_sgd() {
        let mut net = scalar_net(1.0, 0.5);
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, ..Default::default() }).unwrap();
        sgd.step(net.params_mut());
        assert_eq!(w(&net), 1.0 - 0.1 * 0.5);
        assert_eq!(w(&net), 0.95);

        let mut net = scalar_net(1.0, 0.0);
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.9, nesterov: true, ..Default::default() }).unwrap();
        sgd.step(net.params_mut());
        assert_eq!(w(&net), 1.0);
    }

    #[test]
    fn nesterov_two_steps_match_unrolled() {
        let (lr, mu, g) = (0.1f32, 0.9f32, 0.5f32);
        let mut net = scalar_net(1.0, g);
        let mut sgd = Sgd::new(SgdConfig { lr, momentum: mu, nesterov: true, ..Default::default() }).unwrap();
        sgd.step(net.params_mut());
        sgd.step(net.params_mut());
        let mut v = 0.0f32;
        let mut x = 1.0f32;
        for _ in 0..2 {
            v = mu * v - lr * g;
            x = x + mu * v - lr * g;
        }
        assert_eq!(w(&net).to_bits(), x.to_bits());
    }

    #[test]
    fn warmup_and_validation() {
        let mut sgd = Sgd::new(SgdConfig { lr: 1.0, warmup_steps: 4, ..Default::default() }).unwrap();
        let mut net = scalar_net(0.0, 1.0);
        let mut seen = Vec::new();
        for _ in 0..6 {
            seen.push(sgd.current_lr());
            sgd.step(net.params_mut());
        }
        assert_eq!(seen, [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
        assert!(Sgd::new(SgdConfig { momentum: 1.0, ..Default::default() }).is_err());
        assert!(Sgd::new(SgdConfig { lr: 0.0, ..Default::default() }).is_err());
        assert!(Adam::new(AdamConfig { beta2: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        for g in [1e-3f32, -4.0, 250.0] {
            let mut net = scalar_net(0.0, g);
            let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }).unwrap();
            adam.step(net.params_mut());
            let expected = -0.01 * g.signum();
            assert!((w(&net) - expected).abs() <= 1e-3 * 0.01, "{g}: {}", w(&net));
        }
        let mut net = scalar_net(0.5, 0.0);
        Adam::new(AdamConfig::default()).unwrap().step(net.params_mut());
        assert_eq!(w(&net), 0.5);
    }

    #[test]
    fn loss_scale_round_trip() {
        assert!(LossScaler::new(1000.0).is_err());
        assert!(LossScaler::new(0.0).is_err());
        assert!(LossScaler::new(-2.0).is_err());
        let s = LossScaler::new(1024.0).unwrap();
        let g = Tensor::new(vec![3], vec![0.1, -3.3e-20, 7.0]).unwrap();
        let scaled = s.scale_loss(&g);
        let mut net = scalar_net(0.0, scaled.data()[0]);
        s.unscale_grads(net.params_mut());
        assert_eq!(net.params()[0].grad.data()[0].to_bits(), 0.1f32.to_bits());
        assert!(LossScaler::identity().scale_loss(&g).bit_eq(&g));
        net.params_mut()[0].grad = Tensor::new(vec![1, 1], vec![f32::INFINITY]).unwrap();
        assert!(!grads_finite(net.params()));
    }
}
