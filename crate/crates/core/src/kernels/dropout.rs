use rand::Rng;

use super::KernelError;
use crate::numerics::Precision;
use crate::tensor::{RngStream, Tensor};

/// Inverted dropout: kept elements are scaled by `1 / (1 - p)`.
///
/// Returns the output and a 0/1 keep mask for the backward pass.
pub fn dropout(x: &Tensor, p: f32, rng: &mut RngStream) -> Result<(Tensor, Tensor), KernelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(KernelError::InvalidProbability(p));
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.len()).map(|_| if rng.random::<f32>() < p { 0.0 } else { 1.0 }).collect();
    let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m * scale).collect();
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y, Precision::Fp32),
        Tensor::from_parts(x.shape().to_vec(), mask, Precision::Fp32),
    ))
}

pub fn dropout_backward(dy: &Tensor, mask: &Tensor, p: f32) -> Result<Tensor, KernelError> {
    if !(0.0..1.0).contains(&p) {
        return Err(KernelError::InvalidProbability(p));
    }
    dy.expect_shape(mask.shape())?;
    let scale = 1.0 / (1.0 - p);
    let data = dy.data().iter().zip(mask.data()).map(|(&g, &m)| g * m * scale).collect();
    Ok(Tensor::from_parts(dy.shape().to_vec(), data, Precision::Fp32))
}
