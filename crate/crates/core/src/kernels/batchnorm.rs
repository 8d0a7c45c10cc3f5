use super::{shape_err, KernelError};
use crate::numerics::Precision;
use crate::tensor::Tensor;

/// Per-channel batch-norm parameters and statistics.
///
/// Training uses the biased batch variance. Running averages are kept for
/// optional inference use.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            batch_mean: vec![0.0; channels],
            batch_var: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// `(N, C, inner)` for `[N, C]` or `[N, C, ...]` inputs.
fn layout(x: &Tensor, state: &BatchNormState) -> Result<(usize, usize, usize), KernelError> {
    let shape = x.shape();
    if shape.len() < 2 || shape[1] != state.channels() {
        return Err(shape_err("batchnorm", format!("input {shape:?} for {} channels", state.channels())));
    }
    if !(state.eps > 0.0) {
        return Err(KernelError::InvalidSpec { op: "batchnorm", detail: format!("eps {} must be positive", state.eps) });
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn for_channel(n: usize, c: usize, inner: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |img| {
        let base = (img * c + ch) * inner;
        base..base + inner
    })
}

fn normalize(x: &Tensor, state: &BatchNormState, mean: &[f32], var: &[f32]) -> Tensor {
    let (n, c, inner) = (x.shape()[0], x.shape()[1], x.len() / (x.shape()[0] * x.shape()[1]));
    let mut out = vec![0.0f32; x.len()];
    let src = x.data();
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch] + state.eps).sqrt();
        for i in for_channel(n, c, inner, ch) {
            out[i] = state.gamma[ch] * ((src[i] - mean[ch]) * inv_std) + state.beta[ch];
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out, Precision::Fp32)
}

/// Training-mode normalization with batch statistics, which are saved in
/// `state` for the backward pass and folded into the running averages.
pub fn batchnorm_forward(x: &Tensor, state: &mut BatchNormState) -> Result<Tensor, KernelError> {
    let (n, c, inner) = layout(x, state)?;
    let count = n * inner;
    if count < 2 {
        return Err(KernelError::BatchTooSmall(count));
    }
    let src = x.data();
    for ch in 0..c {
        let mut sum = 0.0f32;
        for i in for_channel(n, c, inner, ch) {
            sum += src[i];
        }
        let mean = sum / count as f32;
        let mut sq = 0.0f32;
        for i in for_channel(n, c, inner, ch) {
            let d = src[i] - mean;
            sq += d * d;
        }
        let var = sq / count as f32;
        state.batch_mean[ch] = mean;
        state.batch_var[ch] = var;
        let m = state.momentum;
        state.running_mean[ch] = (1.0 - m) * state.running_mean[ch] + m * mean;
        state.running_var[ch] = (1.0 - m) * state.running_var[ch] + m * var;
    }
    Ok(normalize(x, state, &state.batch_mean, &state.batch_var))
}

/// Normalization with the running statistics.
pub fn batchnorm_inference(x: &Tensor, state: &BatchNormState) -> Result<Tensor, KernelError> {
    layout(x, state)?;
    Ok(normalize(x, state, &state.running_mean, &state.running_var))
}

/// Returns `(dx, dgamma, dbeta)` using the batch statistics saved by the
/// last [`batchnorm_forward`].
pub fn batchnorm_backward(dy: &Tensor, x: &Tensor, state: &BatchNormState) -> Result<(Tensor, Tensor, Tensor), KernelError> {
    let (n, c, inner) = layout(x, state)?;
    dy.expect_shape(x.shape())?;
    let count = (n * inner) as f32;
    let (src, g) = (x.data(), dy.data());
    let mut dx = vec![0.0f32; x.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ch in 0..c {
        let mean = state.batch_mean[ch];
        let inv_std = 1.0 / (state.batch_var[ch] + state.eps).sqrt();
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f32, 0.0f32);
        for i in for_channel(n, c, inner, ch) {
            sum_dy += g[i];
            sum_dy_xhat += g[i] * ((src[i] - mean) * inv_std);
        }
        dbeta[ch] = sum_dy;
        dgamma[ch] = sum_dy_xhat;
        let scale = state.gamma[ch] * inv_std / count;
        for i in for_channel(n, c, inner, ch) {
            let xhat = (src[i] - mean) * inv_std;
            dx[i] = scale * (count * g[i] - sum_dy - xhat * sum_dy_xhat);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx, Precision::Fp32),
        Tensor::from_parts(vec![c], dgamma, Precision::Fp32),
        Tensor::from_parts(vec![c], dbeta, Precision::Fp32),
    ))
}
