//! Fused LSTM cell with gate order input, forget, cell, output.
//!
//! The four gate pre-activations come from one GEMM over the concatenated
//! `[x, h_prev]` operand, so the whole recurrent product accumulates in FP32
//! before bias and nonlinearities. The cell state stays FP32.

use std::borrow::Cow;

use super::activation::ActivationKind;
use super::gemm::{bias_add, bias_grad, gemm, gemm_nt, gemm_tn, GemmAccumOrder};
use super::{shape_err, KernelError};
use crate::numerics::Precision;
use crate::tensor::{LayerClass, QuantPolicy, Tensor, UnderflowStats};

/// `weight: [4H, I + H]`, `bias: [4H]` (FP32, never quantized).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[1] - self.hidden()
    }

    fn check(&self) -> Result<(usize, usize), KernelError> {
        let h = self.hidden();
        match *self.weight.shape() {
            [rows, cols] if rows == 4 * h && self.bias.len() == 4 * h && h > 0 && cols > h => Ok((cols - h, h)),
            _ => Err(shape_err("lstm", format!("weight {:?} with bias {:?}", self.weight.shape(), self.bias.shape()))),
        }
    }
}

/// Forward state kept for [`lstm_cell_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    /// Quantized `[x, h_prev]`, `[N, I + H]`.
    pub concat: Tensor,
    /// Activated gates, each `[N, H]` flattened: i, f, g, o.
    pub gates: [Vec<f32>; 4],
    pub c_prev: Vec<f32>,
    pub c: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub dx: Tensor,
    pub dh_prev: Tensor,
    pub dc_prev: Tensor,
    pub dweight: Tensor,
    pub dbias: Tensor,
    /// Flushes in the gate-gradient quantization.
    pub underflow: UnderflowStats,
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, wa, wb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut data = Vec::with_capacity(n * (wa + wb));
    for r in 0..n {
        data.extend_from_slice(&a.data()[r * wa..(r + 1) * wa]);
        data.extend_from_slice(&b.data()[r * wb..(r + 1) * wb]);
    }
    let tag = if a.tag() == b.tag() { a.tag() } else { Precision::Fp32 };
    Tensor::from_parts(vec![n, wa + wb], data, tag)
}

/// One time step. Returns `(h, c, cache)`; `h` and `c` are FP32.
///
/// Per the policy's LSTM rule, `x`, `h_prev` and the gate pre-activations are
/// quantized, and `weights.weight` is quantized unless it already carries the
/// policy tag.
pub fn lstm_cell_forward(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    weights: &LstmWeights,
    policy: &QuantPolicy,
    order: GemmAccumOrder,
) -> Result<(Tensor, Tensor, LstmCache), KernelError> {
    let (input, hidden) = weights.check()?;
    let n = x.shape()[0];
    x.expect_shape(&[n, input])?;
    h_prev.expect_shape(&[n, hidden])?;
    c_prev.expect_shape(&[n, hidden])?;
    let rule = policy.rule(LayerClass::Lstm);

    let w = if rule.weights && weights.weight.tag() != policy.precision {
        Cow::Owned(policy.quantize(&weights.weight))
    } else {
        Cow::Borrowed(&weights.weight)
    };
    let concat = concat_cols(&policy.quantize_if(rule.activations, x), &policy.quantize_if(rule.activations, h_prev));
    let pre = bias_add(&gemm_nt(&concat, &w, order)?, &weights.bias)?;
    let pre = policy.quantize_if(rule.activations, &pre);

    let mut gates: [Vec<f32>; 4] = std::array::from_fn(|_| Vec::with_capacity(n * hidden));
    for row in pre.data().chunks_exact(4 * hidden) {
        for (k, gate) in gates.iter_mut().enumerate() {
            let kind = if k == 2 { ActivationKind::Tanh } else { ActivationKind::Sigmoid };
            gate.extend(row[k * hidden..(k + 1) * hidden].iter().map(|&v| kind.apply(v)));
        }
    }
    let [i, f, g, o] = &gates;
    let cp = c_prev.data();
    let c: Vec<f32> = (0..n * hidden).map(|j| f[j] * cp[j] + i[j] * g[j]).collect();
    let h: Vec<f32> = (0..n * hidden).map(|j| o[j] * c[j].tanh()).collect();

    let cache = LstmCache { concat, gates, c_prev: cp.to_vec(), c: c.clone() };
    Ok((
        Tensor::from_parts(vec![n, hidden], h, Precision::Fp32),
        Tensor::from_parts(vec![n, hidden], c, Precision::Fp32),
        cache,
    ))
}

/// Backward through one step given upstream `dh` and `dc`.
///
/// `weights` must be the same tensors used in the forward call.
pub fn lstm_cell_backward(
    dh: &Tensor,
    dc: &Tensor,
    cache: &LstmCache,
    weights: &LstmWeights,
    policy: &QuantPolicy,
    order: GemmAccumOrder,
) -> Result<LstmGrads, KernelError> {
    let (input, hidden) = weights.check()?;
    let n = cache.concat.shape()[0];
    dh.expect_shape(&[n, hidden])?;
    dc.expect_shape(&[n, hidden])?;
    let rule = policy.rule(LayerClass::Lstm);

    let [i, f, g, o] = &cache.gates;
    let (dh, dc) = (dh.data(), dc.data());
    let mut dpre = vec![0.0f32; n * 4 * hidden];
    let mut dc_prev = vec![0.0f32; n * hidden];
    for r in 0..n {
        for j in 0..hidden {
            let k = r * hidden + j;
            let tc = cache.c[k].tanh();
            let dc_total = dc[k] + dh[k] * o[k] * (1.0 - tc * tc);
            let row = &mut dpre[r * 4 * hidden..(r + 1) * 4 * hidden];
            row[j] = dc_total * g[k] * (i[k] * (1.0 - i[k]));
            row[hidden + j] = dc_total * cache.c_prev[k] * (f[k] * (1.0 - f[k]));
            row[2 * hidden + j] = dc_total * i[k] * (1.0 - g[k] * g[k]);
            row[3 * hidden + j] = dh[k] * tc * (o[k] * (1.0 - o[k]));
            dc_prev[k] = dc_total * f[k];
        }
    }
    let dpre = Tensor::from_parts(vec![n, 4 * hidden], dpre, Precision::Fp32);
    let (dpre, underflow) = policy.quantize_grad(rule.error_grads, &dpre);

    let w = if rule.weights && weights.weight.tag() != policy.precision {
        Cow::Owned(policy.quantize(&weights.weight))
    } else {
        Cow::Borrowed(&weights.weight)
    };
    let dweight = gemm_tn(&dpre, &cache.concat, order)?;
    let dbias = bias_grad(&dpre);
    let dconcat = gemm(&dpre, &w, order)?;

    let width = input + hidden;
    let mut dx = Vec::with_capacity(n * input);
    let mut dh_prev = Vec::with_capacity(n * hidden);
    for row in dconcat.data().chunks_exact(width) {
        dx.extend_from_slice(&row[..input]);
        dh_prev.extend_from_slice(&row[input..]);
    }
    Ok(LstmGrads {
        dx: Tensor::from_parts(vec![n, input], dx, Precision::Fp32),
        dh_prev: Tensor::from_parts(vec![n, hidden], dh_prev, Precision::Fp32),
        dc_prev: Tensor::from_parts(vec![n, hidden], dc_prev, Precision::Fp32),
        dweight,
        dbias,
        underflow,
    })
}
