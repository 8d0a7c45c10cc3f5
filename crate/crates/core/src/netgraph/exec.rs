use super::{NetError, Network};
use crate::kernels::{
    activation_backward, activation_forward, batchnorm_backward, batchnorm_forward, batchnorm_inference, bias_add,
    bias_add_channels, bias_grad, bias_grad_channels, conv2d_backward, conv2d_forward, dropout, dropout_backward, gemm,
    gemm_nt, gemm_tn, lstm_cell_backward, lstm_cell_forward, pool_backward, pool_forward, BatchNormState, LstmCache,
    LstmWeights, PoolCache,
};
use crate::netgraph::LayerSpec;
use crate::tensor::{elementwise_binary, BinaryOp, LayerQuant, Tensor, UnderflowStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Dropout disabled; nothing in the network is updated.
    Eval,
}

#[derive(Debug)]
enum Entry {
    /// Quantized input flattened to `[rows, inputs]`.
    Dense { x: Tensor },
    Conv { x: Tensor },
    BatchNorm { x: Tensor, state: BatchNormState },
    Activation { x: Tensor },
    Pool { cache: PoolCache },
    Dropout { mask: Option<Tensor> },
    Eltwise,
    Lstm { caches: Vec<LstmCache>, weights: LstmWeights },
    Flatten,
}

/// Saved forward state. Consumed by [`Network::backward`].
#[derive(Debug)]
pub struct Tape {
    net_id: u64,
    mode: Mode,
    batch: usize,
    entries: Vec<Entry>,
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    /// Gradient with respect to the network input.
    pub dx: Tensor,
    /// Error-gradient elements flushed to zero by quantization in this pass.
    pub underflow: UnderflowStats,
}

fn batched(batch: usize, shape: &[usize]) -> Vec<usize> {
    [&[batch], shape].concat()
}

/// `[N, T, F]` to `[N, F]` at step `t`.
fn time_slice(x: &Tensor, t: usize) -> Tensor {
    let (n, steps, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut data = Vec::with_capacity(n * f);
    for r in 0..n {
        let start = (r * steps + t) * f;
        data.extend_from_slice(&x.data()[start..start + f]);
    }
    Tensor::from_parts(vec![n, f], data, x.tag())
}

fn scatter_step(dst: &mut [f32], src: &Tensor, steps: usize, t: usize) {
    let f = src.shape()[1];
    for (r, row) in src.data().chunks_exact(f).enumerate() {
        let start = (r * steps + t) * f;
        dst[start..start + f].copy_from_slice(row);
    }
}

fn add_into(acc: &mut [f32], g: &Tensor) {
    for (a, &v) in acc.iter_mut().zip(g.data()) {
        *a += v;
    }
}

impl Network {
    fn check_input(&self, x: &Tensor) -> Result<usize, NetError> {
        match x.shape().split_first() {
            Some((&n, rest)) if rest == self.input_shape.as_slice() => Ok(n),
            _ => Err(NetError::InputShape { expected: self.input_shape.clone(), found: x.shape().to_vec() }),
        }
    }

    /// Runs the network on `x: [N, input_shape...]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape), NetError> {
        let batch = self.check_input(x)?;
        let mut skips: Vec<Option<Tensor>> = vec![None; self.layers.len() + 1];
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            if self.skip_sources[i] {
                skips[i] = Some(cur.clone());
            }
            let (y, entry) = self.forward_layer(i, &cur, mode, &skips, batch)?;
            entries.push(entry);
            cur = y;
        }
        Ok((cur, Tape { net_id: self.id, mode, batch, entries }))
    }

    fn forward_layer(
        &mut self,
        i: usize,
        x: &Tensor,
        mode: Mode,
        skips: &[Option<Tensor>],
        batch: usize,
    ) -> Result<(Tensor, Entry), NetError> {
        let order = self.order;
        let policy = &self.policy;
        let layer = &mut self.layers[i];
        let rule = layer.spec.class().map_or(LayerQuant::NONE, |c| policy.rule(c));
        let param = layer.param.map(|p| &self.params[p]);
        let out_shape = batched(batch, &layer.out_shape);
        let q = |t: &Tensor| policy.quantize_if(rule.activations, t);

        Ok(match &layer.spec {
            LayerSpec::Dense { inputs, .. } => {
                let p = param.expect("dense layer owns parameters");
                let xq = q(x).reshape(vec![x.len() / inputs, *inputs])?;
                let mut y = gemm_nt(&xq, &p.shadow, order)?;
                if let Some(b) = &p.bias {
                    y = bias_add(&y, b)?;
                }
                (q(&y).reshape(out_shape)?, Entry::Dense { x: xq })
            }
            LayerSpec::Conv2d { spec, .. } => {
                let p = param.expect("conv layer owns parameters");
                let xq = q(x);
                let mut y = conv2d_forward(&xq, &p.shadow, spec, order)?;
                if let Some(b) = &p.bias {
                    y = bias_add_channels(&y, b)?;
                }
                (q(&y), Entry::Conv { x: xq })
            }
            LayerSpec::BatchNorm { .. } => {
                let p = param.expect("batchnorm layer owns parameters");
                let xq = q(x);
                let state = layer.bn.as_mut().expect("batchnorm state");
                state.gamma = p.shadow.data().to_vec();
                state.beta = p.bias.as_ref().expect("batchnorm shift").data().to_vec();
                match mode {
                    Mode::Train => {
                        let y = batchnorm_forward(&xq, state)?;
                        (y, Entry::BatchNorm { x: xq, state: state.clone() })
                    }
                    Mode::Eval if self.bn_running_stats => {
                        let y = batchnorm_inference(&xq, state)?;
                        (y, Entry::BatchNorm { x: xq, state: state.clone() })
                    }
                    Mode::Eval => {
                        let mut local = state.clone();
                        let y = batchnorm_forward(&xq, &mut local)?;
                        (y, Entry::BatchNorm { x: xq, state: local })
                    }
                }
            }
            LayerSpec::Activation(kind) => {
                let xq = q(x);
                (activation_forward(*kind, &xq), Entry::Activation { x: xq })
            }
            LayerSpec::Pool { kind, spec } => {
                let (y, cache) = pool_forward(*kind, &q(x), *spec)?;
                (y, Entry::Pool { cache })
            }
            LayerSpec::Dropout { p } => {
                let xq = q(x);
                match mode {
                    Mode::Train => {
                        let (y, mask) = dropout(&xq, *p, &mut self.dropout_rng)?;
                        (y, Entry::Dropout { mask: Some(mask) })
                    }
                    Mode::Eval => (xq, Entry::Dropout { mask: None }),
                }
            }
            LayerSpec::EltwiseAdd { from } => {
                let skip = skips[*from].as_ref().expect("skip source recorded");
                (elementwise_binary(BinaryOp::Add, &q(x), &q(skip))?, Entry::Eltwise)
            }
            LayerSpec::Lstm { hidden, .. } => {
                let p = param.expect("lstm layer owns parameters");
                let steps = layer.in_shape[0];
                let weights = LstmWeights { weight: p.shadow.clone(), bias: p.bias.clone().expect("lstm bias") };
                let mut h = Tensor::zeros(vec![batch, *hidden])?;
                let mut c = h.clone();
                let mut out = vec![0.0f32; batch * steps * hidden];
                let mut caches = Vec::with_capacity(steps);
                for t in 0..steps {
                    let (h_next, c_next, cache) = lstm_cell_forward(&time_slice(x, t), &h, &c, &weights, policy, order)?;
                    scatter_step(&mut out, &h_next, steps, t);
                    caches.push(cache);
                    (h, c) = (h_next, c_next);
                }
                (Tensor::new(out_shape, out)?, Entry::Lstm { caches, weights })
            }
            LayerSpec::Flatten => (x.reshape(out_shape)?, Entry::Flatten),
        })
    }

    /// Backpropagates `dy` through the pass recorded in `tape`, overwriting
    /// every parameter gradient.
    pub fn backward(&mut self, tape: Tape, dy: &Tensor) -> Result<BackwardOutput, NetError> {
        if tape.net_id != self.id {
            return Err(NetError::ForeignTape);
        }
        if tape.mode != Mode::Train {
            return Err(NetError::EvalTape);
        }
        let expected = batched(tape.batch, self.output_shape());
        if dy.shape() != expected.as_slice() {
            return Err(NetError::OutputGradShape { expected, found: dy.shape().to_vec() });
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; self.layers.len() + 1];
        let mut stats = UnderflowStats::default();
        let mut g = dy.clone();
        for (i, entry) in tape.entries.into_iter().enumerate().rev() {
            let dx = self.backward_layer(i, entry, &g, tape.batch, &mut pending, &mut stats)?;
            g = match pending[i].take() {
                Some(extra) => elementwise_binary(BinaryOp::Add, &dx, &extra)?,
                None => dx,
            };
        }
        Ok(BackwardOutput { dx: g, underflow: stats })
    }

    fn backward_layer(
        &mut self,
        i: usize,
        entry: Entry,
        g: &Tensor,
        batch: usize,
        pending: &mut [Option<Tensor>],
        stats: &mut UnderflowStats,
    ) -> Result<Tensor, NetError> {
        let order = self.order;
        let layer = &self.layers[i];
        let rule = layer.spec.class().map_or(LayerQuant::NONE, |c| self.policy.rule(c));
        let in_shape = batched(batch, &layer.in_shape);
        let (dy, st) = self.policy.quantize_grad(rule.error_grads, g);
        stats.merge(st);
        let param = layer.param.map(|p| &mut self.params[p]);

        Ok(match (&layer.spec, entry) {
            (LayerSpec::Dense { outputs, .. }, Entry::Dense { x }) => {
                let p = param.expect("dense layer owns parameters");
                let dy = dy.reshape(vec![x.shape()[0], *outputs])?;
                p.grad = gemm_tn(&dy, &x, order)?;
                if p.bias.is_some() {
                    p.bias_grad = Some(bias_grad(&dy));
                }
                gemm(&dy, &p.shadow, order)?.reshape(in_shape)?
            }
            (LayerSpec::Conv2d { spec, .. }, Entry::Conv { x }) => {
                let p = param.expect("conv layer owns parameters");
                let (dx, dw) = conv2d_backward(&x, &p.shadow, &dy, spec, order)?;
                p.grad = dw;
                if p.bias.is_some() {
                    p.bias_grad = Some(bias_grad_channels(&dy));
                }
                dx
            }
            (LayerSpec::BatchNorm { .. }, Entry::BatchNorm { x, state }) => {
                let p = param.expect("batchnorm layer owns parameters");
                let (dx, dgamma, dbeta) = batchnorm_backward(&dy, &x, &state)?;
                p.grad = dgamma;
                p.bias_grad = Some(dbeta);
                dx
            }
            (LayerSpec::Activation(kind), Entry::Activation { x }) => activation_backward(*kind, &x, &dy)?,
            (LayerSpec::Pool { .. }, Entry::Pool { cache }) => pool_backward(&dy, &cache)?,
            (LayerSpec::Dropout { p }, Entry::Dropout { mask: Some(mask) }) => dropout_backward(&dy, &mask, *p)?,
            (LayerSpec::EltwiseAdd { from }, Entry::Eltwise) => {
                let slot = &mut pending[*from];
                *slot = Some(match slot.take() {
                    Some(prev) => elementwise_binary(BinaryOp::Add, &prev, &dy)?,
                    None => dy.clone(),
                });
                dy
            }
            (LayerSpec::Lstm { inputs, hidden }, Entry::Lstm { caches, weights }) => {
                let p = param.expect("lstm layer owns parameters");
                let steps = caches.len();
                let mut dweight = vec![0.0f32; weights.weight.len()];
                let mut dbias = vec![0.0f32; weights.bias.len()];
                let mut dx = vec![0.0f32; batch * steps * inputs];
                let mut dh_next = Tensor::zeros(vec![batch, *hidden])?;
                let mut dc_next = dh_next.clone();
                for (t, cache) in caches.iter().enumerate().rev() {
                    let dh = elementwise_binary(BinaryOp::Add, &time_slice(&dy, t), &dh_next)?;
                    let grads = lstm_cell_backward(&dh, &dc_next, cache, &weights, &self.policy, order)?;
                    add_into(&mut dweight, &grads.dweight);
                    add_into(&mut dbias, &grads.dbias);
                    scatter_step(&mut dx, &grads.dx, steps, t);
                    stats.merge(grads.underflow);
                    (dh_next, dc_next) = (grads.dh_prev, grads.dc_prev);
                }
                p.grad = Tensor::new(weights.weight.shape().to_vec(), dweight)?;
                p.bias_grad = Some(Tensor::new(vec![dbias.len()], dbias)?);
                Tensor::new(in_shape, dx)?
            }
            (LayerSpec::Flatten, Entry::Flatten) => g.reshape(in_shape)?,
            (spec, _) => unreachable!("tape entry does not match layer {}", spec.name()),
        })
    }
}
