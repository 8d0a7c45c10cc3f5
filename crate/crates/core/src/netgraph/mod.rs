//! Sequential networks executing the mixed-precision training dataflow.
//!
//! Every parameter keeps an FP32 master copy, a shadow copy projected by the
//! policy for use in forward and backward passes, and an FP32 gradient.
//! Biases never pass through the quantizer.

mod exec;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::kernels::{ActivationKind, BatchNormState, ConvSpec, GemmAccumOrder, KernelError, PoolKind, PoolSpec};
use crate::tensor::{init_tensor, InitScheme, LayerClass, QuantPolicy, RngStream, Tensor, TensorError};

pub use exec::{BackwardOutput, Mode, Tape};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("layer {layer}: {detail}")]
    Build { layer: usize, detail: String },
    #[error("network input must be [N, {expected:?}], got {found:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("output gradient must be {expected:?}, got {found:?}")]
    OutputGradShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("tape was recorded by a different network")]
    ForeignTape,
    #[error("backward needs a tape recorded in training mode")]
    EvalTape,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One layer of a sequential network. Shapes below exclude the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Affine map over the last axis; weight `[outputs, inputs]`.
    Dense { inputs: usize, outputs: usize, bias: bool },
    /// `[C, H, W] -> [F, H', W']`.
    Conv2d { spec: ConvSpec, bias: bool },
    /// Normalizes axis 0 of the per-sample shape.
    BatchNorm { channels: usize },
    Activation(ActivationKind),
    Pool { kind: PoolKind, spec: PoolSpec },
    Dropout { p: f32 },
    /// Adds the tensor that entered layer `from` (0 is the network input).
    EltwiseAdd { from: usize },
    /// Runs a cell over `[T, inputs]` from zero state, emitting `[T, hidden]`.
    Lstm { inputs: usize, hidden: usize },
    Flatten,
}

impl LayerSpec {
    pub fn class(&self) -> Option<LayerClass> {
        Some(match self {
            LayerSpec::Dense { .. } => LayerClass::InnerProduct,
            LayerSpec::Conv2d { .. } => LayerClass::Convolution,
            LayerSpec::BatchNorm { .. } => LayerClass::BatchNorm,
            LayerSpec::Activation(_) => LayerClass::Activation,
            LayerSpec::Pool { .. } => LayerClass::Pooling,
            LayerSpec::Dropout { .. } => LayerClass::Dropout,
            LayerSpec::EltwiseAdd { .. } => LayerClass::EltWise,
            LayerSpec::Lstm { .. } => LayerClass::Lstm,
            LayerSpec::Flatten => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::EltwiseAdd { .. } => "eltwise_add",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Flatten => "flatten",
        }
    }
}

/// Trainable tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub name: String,
    class: LayerClass,
    pub master: Tensor,
    /// Policy projection of `master`, refreshed by [`Network::refresh_shadows`].
    pub shadow: Tensor,
    pub grad: Tensor,
    pub bias: Option<Tensor>,
    pub bias_grad: Option<Tensor>,
}

impl ParamSet {
    fn new(name: String, class: LayerClass, master: Tensor, bias: Option<Tensor>) -> Self {
        ParamSet {
            name,
            class,
            shadow: master.clone(),
            grad: master.zeros_like(),
            bias_grad: bias.as_ref().map(Tensor::zeros_like),
            master,
            bias,
        }
    }

    pub fn class(&self) -> LayerClass {
        self.class
    }

    fn refresh(&mut self, policy: &QuantPolicy) {
        self.shadow = policy.quantize_if(policy.rule(self.class).weights, &self.master);
    }

    pub fn zero_grads(&mut self) {
        self.grad = self.master.zeros_like();
        if let Some(b) = &self.bias {
            self.bias_grad = Some(b.zeros_like());
        }
    }

    /// Number of scalar parameters, bias included.
    pub fn len(&self) -> usize {
        self.master.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    pub(crate) param: Option<usize>,
    pub(crate) bn: Option<BatchNormState>,
}

#[derive(Debug, Clone)]
pub struct Network {
    id: u64,
    layers: Vec<Layer>,
    params: Vec<ParamSet>,
    policy: QuantPolicy,
    order: GemmAccumOrder,
    input_shape: Vec<usize>,
    dropout_rng: RngStream,
    /// Layer inputs that a later `EltwiseAdd` reads.
    skip_sources: Vec<bool>,
    /// Eval-mode batch norm uses running statistics instead of batch ones.
    pub bn_running_stats: bool,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn out_shape(index: usize, spec: &LayerSpec, input: &[usize], seen: &[Vec<usize>]) -> Result<Vec<usize>, NetError> {
    let bad = |detail: String| NetError::Build { layer: index, detail };
    match spec {
        LayerSpec::Dense { inputs, outputs, .. } => match input.split_last() {
            Some((&last, lead)) if last == *inputs && *outputs > 0 => Ok([lead, &[*outputs]].concat()),
            _ => Err(bad(format!("dense {inputs}->{outputs} cannot take {input:?}"))),
        },
        LayerSpec::Conv2d { spec, .. } => match *input {
            [c, h, w] if c == spec.in_channels => {
                let (oh, ow) = spec.output_dims(h, w)?;
                Ok(vec![spec.out_channels, oh, ow])
            }
            _ => Err(bad(format!("conv2d with {} input channels cannot take {input:?}", spec.in_channels))),
        },
        LayerSpec::BatchNorm { channels } => match input.first() {
            Some(&c) if c == *channels => Ok(input.to_vec()),
            _ => Err(bad(format!("batchnorm over {channels} channels cannot take {input:?}"))),
        },
        LayerSpec::Activation(_) | LayerSpec::Dropout { .. } => {
            if let LayerSpec::Dropout { p } = spec {
                if !(0.0..1.0).contains(p) {
                    return Err(KernelError::InvalidProbability(*p).into());
                }
            }
            Ok(input.to_vec())
        }
        LayerSpec::Pool { spec, .. } => match *input {
            [c, h, w] => {
                let (oh, ow) = spec.output_dims(h, w)?;
                Ok(vec![c, oh, ow])
            }
            _ => Err(bad(format!("pooling needs [C, H, W], got {input:?}"))),
        },
        LayerSpec::EltwiseAdd { from } => match seen.get(*from) {
            Some(src) if src == input => Ok(input.to_vec()),
            Some(src) => Err(bad(format!("skip source {from} has shape {src:?}, input is {input:?}"))),
            None => Err(bad(format!("skip source {from} is not an earlier layer"))),
        },
        LayerSpec::Lstm { inputs, hidden } => match *input {
            [t, i] if i == *inputs && *hidden > 0 => Ok(vec![t, *hidden]),
            _ => Err(bad(format!("lstm {inputs}->{hidden} needs [T, {inputs}], got {input:?}"))),
        },
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
    }
}

fn init_params(index: usize, spec: &LayerSpec, rng: &RngStream) -> Result<Option<ParamSet>, NetError> {
    let mut r = rng.derive(index as u64);
    let name = format!("{index:02}_{}", spec.name());
    let zeros = |n: usize| Tensor::zeros(vec![n]);
    let set = match spec {
        LayerSpec::Dense { inputs, outputs, bias } => {
            let w = init_tensor(&[*outputs, *inputs], InitScheme::HeNormal { fan_in: *inputs }, &mut r)?;
            let b = bias.then(|| zeros(*outputs)).transpose()?;
            ParamSet::new(name, LayerClass::InnerProduct, w, b)
        }
        LayerSpec::Conv2d { spec, bias } => {
            let w = init_tensor(&spec.weight_shape(), InitScheme::HeNormal { fan_in: spec.patch_len() }, &mut r)?;
            let b = bias.then(|| zeros(spec.out_channels)).transpose()?;
            ParamSet::new(name, LayerClass::Convolution, w, b)
        }
        LayerSpec::BatchNorm { channels } => {
            ParamSet::new(name, LayerClass::BatchNorm, Tensor::full(vec![*channels], 1.0)?, Some(zeros(*channels)?))
        }
        LayerSpec::Lstm { inputs, hidden } => {
            let (i, h) = (*inputs, *hidden);
            let scheme = InitScheme::XavierUniform { fan_in: i + h, fan_out: 4 * h };
            let w = init_tensor(&[4 * h, i + h], scheme, &mut r)?;
            // Forget-gate bias starts at one.
            let mut b = zeros(4 * h)?;
            b.data_mut()[h..2 * h].fill(1.0);
            ParamSet::new(name, LayerClass::Lstm, w, Some(b))
        }
        _ => return Ok(None),
    };
    Ok(Some(set))
}

/// Builds a network for per-sample inputs of shape `input_shape`.
///
/// Parameters are drawn from streams derived from `rng` per layer index, so
/// the initial weights do not depend on the policy.
pub fn build_network(
    specs: &[LayerSpec],
    input_shape: &[usize],
    policy: QuantPolicy,
    rng: &RngStream,
) -> Result<Network, NetError> {
    let mut seen = vec![input_shape.to_vec()];
    let mut layers = Vec::with_capacity(specs.len());
    let mut params = Vec::new();
    let mut skip_sources = vec![false; specs.len() + 1];
    for (index, spec) in specs.iter().enumerate() {
        let in_shape = seen[index].clone();
        let out = out_shape(index, spec, &in_shape, &seen)?;
        if let LayerSpec::EltwiseAdd { from } = spec {
            skip_sources[*from] = true;
        }
        let param = match init_params(index, spec, rng)? {
            Some(p) => {
                params.push(p);
                Some(params.len() - 1)
            }
            None => None,
        };
        let bn = match spec {
            LayerSpec::BatchNorm { channels } => Some(BatchNormState::new(*channels)),
            _ => None,
        };
        layers.push(Layer { spec: spec.clone(), in_shape, out_shape: out.clone(), param, bn });
        seen.push(out);
    }
    let mut net = Network {
        id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        layers,
        params,
        policy,
        order: GemmAccumOrder::SequentialK,
        input_shape: input_shape.to_vec(),
        dropout_rng: rng.derive(u64::MAX),
        skip_sources,
        bn_running_stats: false,
    };
    net.refresh_shadows();
    Ok(net)
}

impl Network {
    /// Re-projects every shadow from its master. Call after each optimizer step.
    pub fn refresh_shadows(&mut self) {
        for p in &mut self.params {
            p.refresh(&self.policy);
        }
    }

    pub fn policy(&self) -> &QuantPolicy {
        &self.policy
    }

    /// Replaces the policy and refreshes the shadows.
    pub fn set_policy(&mut self, policy: QuantPolicy) {
        self.policy = policy;
        self.refresh_shadows();
    }

    pub fn accum_order(&self) -> GemmAccumOrder {
        self.order
    }

    pub fn set_accum_order(&mut self, order: GemmAccumOrder) {
        self.order = order;
    }

    pub fn params(&self) -> &[ParamSet] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamSet] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(ParamSet::zero_grads);
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    /// Index of the parameter set owned by layer `layer`, if any.
    pub fn param_index(&self, layer: usize) -> Option<usize> {
        self.layers.get(layer).and_then(|l| l.param)
    }

    /// Batch-norm running statistics of layer `layer`.
    pub fn batchnorm_state(&self, layer: usize) -> Option<&BatchNormState> {
        self.layers.get(layer).and_then(|l| l.bn.as_ref())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(ParamSet::len).sum()
    }
}
