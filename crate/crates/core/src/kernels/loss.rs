use super::activation::sigmoid;
use super::{shape_err, KernelError};
use crate::numerics::Precision;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[LOG_LOSS_CLAMP, 1 - LOG_LOSS_CLAMP]`.
pub const LOG_LOSS_CLAMP: f32 = 1e-7;

/// Mean softmax cross-entropy over `[N, C]` logits.
///
/// Returns the loss and `dlogits = (softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor), KernelError> {
    let [n, c] = *logits.shape() else {
        return Err(shape_err("softmax_cross_entropy", format!("logits {:?} are not [N, C]", logits.shape())));
    };
    if labels.len() != n {
        return Err(shape_err("softmax_cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(KernelError::LabelOutOfRange { label, classes: c });
    }
    let mut grad = vec![0.0f32; n * c];
    let mut total = 0.0f64;
    for (row, (z, &label)) in logits.data().chunks_exact(c).zip(labels).enumerate() {
        let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f32;
        for &v in z {
            denom += (v - max).exp();
        }
        total += ((denom.ln() + max) - z[label]) as f64;
        let g = &mut grad[row * c..(row + 1) * c];
        for (k, (&v, gk)) in z.iter().zip(g.iter_mut()).enumerate() {
            let p = (v - max).exp() / denom;
            *gk = (p - (k == label) as u8 as f32) / n as f32;
        }
    }
    Ok(((total / n as f64) as f32, Tensor::from_parts(vec![n, c], grad, Precision::Fp32)))
}

/// Mean binary log loss of probabilities `p` against 0/1 targets `y`.
pub fn binary_log_loss(p: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(p.len(), y.len());
    let mut total = 0.0f64;
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP) as f64;
        total -= yi as f64 * q.ln() + (1.0 - yi as f64) * (1.0 - q).ln();
    }
    (total / p.len().max(1) as f64) as f32
}

/// Log loss on logits with a sigmoid link; `dz = (sigmoid(z) - y) / N`.
pub fn sigmoid_log_loss(logits: &Tensor, targets: &[f32]) -> Result<(f32, Tensor), KernelError> {
    if logits.len() != targets.len() {
        return Err(shape_err("sigmoid_log_loss", format!("{} logits for {} targets", logits.len(), targets.len())));
    }
    let p: Vec<f32> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    let n = targets.len() as f32;
    let grad = p.iter().zip(targets).map(|(&pi, &yi)| (pi - yi) / n).collect();
    Ok((binary_log_loss(&p, targets), Tensor::from_parts(logits.shape().to_vec(), grad, Precision::Fp32)))
}

/// Mean squared error; `dpred = 2 (pred - target) / len`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor), KernelError> {
    target.expect_shape(pred.shape())?;
    let n = pred.len() as f32;
    let mut total = 0.0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            total += (d as f64) * (d as f64);
            2.0 * d / n
        })
        .collect();
    Ok(((total / n as f64) as f32, Tensor::from_parts(pred.shape().to_vec(), grad, Precision::Fp32)))
}
