use super::KernelError;
use crate::numerics::Precision;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f32),
    Sigmoid,
    Tanh,
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative at `x`.
    #[inline]
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            ActivationKind::Relu => (x > 0.0) as u8 as f32,
            ActivationKind::LeakyRelu(alpha) => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

pub fn activation_forward(kind: ActivationKind, x: &Tensor) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward(kind: ActivationKind, x: &Tensor, dy: &Tensor) -> Result<Tensor, KernelError> {
    dy.expect_shape(x.shape())?;
    let data = x.data().iter().zip(dy.data()).map(|(&v, &g)| g * kind.derivative(v)).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data, Precision::Fp32))
}
