use super::{shape_err, KernelError};
use crate::numerics::Precision;
use crate::tensor::Tensor;

/// Reduction order along the shared dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GemmAccumOrder {
    /// One running FP32 sum over k = 0, 1, 2, ...
    #[default]
    SequentialK,
    /// Adjacent products are summed pairwise first, as a two-wide dot-product
    /// unit would, and each pair sum is then accumulated. An odd tail is
    /// accumulated alone.
    PairedK,
}

#[inline]
fn dot(a: &[f32], b: &[f32], order: GemmAccumOrder) -> f32 {
    let mut acc = 0.0f32;
    match order {
        GemmAccumOrder::SequentialK => {
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
        }
        GemmAccumOrder::PairedK => {
            let mut pa = a.chunks_exact(2);
            let mut pb = b.chunks_exact(2);
            for (x, y) in (&mut pa).zip(&mut pb) {
                acc += x[0] * y[0] + x[1] * y[1];
            }
            if let (Some(x), Some(y)) = (pa.remainder().first(), pb.remainder().first()) {
                acc += x * y;
            }
        }
    }
    acc
}

/// `out[i][j] = sum_k a[i][k] * bt[j][k]` with `a: [m, k]`, `bt: [n, k]`.
///
/// Four output columns are reduced side by side for instruction-level
/// parallelism; each column still follows its own fixed k order.
fn matmul_bt(a: &[f32], bt: &[f32], m: usize, k: usize, n: usize, order: GemmAccumOrder) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    if k == 0 {
        return out;
    }
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        let mut j = 0;
        if order == GemmAccumOrder::SequentialK {
            while j + 4 <= n {
                let (b0, b1, b2, b3) = (
                    &bt[j * k..(j + 1) * k],
                    &bt[(j + 1) * k..(j + 2) * k],
                    &bt[(j + 2) * k..(j + 3) * k],
                    &bt[(j + 3) * k..(j + 4) * k],
                );
                let (mut s0, mut s1, mut s2, mut s3) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
                for kk in 0..k {
                    let x = row[kk];
                    s0 += x * b0[kk];
                    s1 += x * b1[kk];
                    s2 += x * b2[kk];
                    s3 += x * b3[kk];
                }
                dst[j] = s0;
                dst[j + 1] = s1;
                dst[j + 2] = s2;
                dst[j + 3] = s3;
                j += 4;
            }
        }
        while j < n {
            dst[j] = dot(row, &bt[j * k..(j + 1) * k], order);
            j += 1;
        }
    }
    out
}

fn transpose_raw(data: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize), KernelError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(shape_err(op, format!("expected a matrix, got shape {other:?}"))),
    }
}

/// Matrix transpose, keeping the tag.
pub fn transpose(t: &Tensor) -> Result<Tensor, KernelError> {
    let (r, c) = dims2(t, "transpose")?;
    Ok(Tensor::from_parts(vec![c, r], transpose_raw(t.data(), r, c), t.tag()))
}

/// `a[M×K] · b[K×N]` with FP32 accumulation and FP32 output.
pub fn gemm(a: &Tensor, b: &Tensor, order: GemmAccumOrder) -> Result<Tensor, KernelError> {
    let (m, k) = dims2(a, "gemm")?;
    let (k2, n) = dims2(b, "gemm")?;
    if k != k2 {
        return Err(shape_err("gemm", format!("inner dimensions {k} and {k2} differ")));
    }
    let bt = transpose_raw(b.data(), k, n);
    Ok(Tensor::from_parts(vec![m, n], matmul_bt(a.data(), &bt, m, k, n, order), Precision::Fp32))
}

/// `a[M×K] · b[N×K]ᵀ`.
pub fn gemm_nt(a: &Tensor, b: &Tensor, order: GemmAccumOrder) -> Result<Tensor, KernelError> {
    let (m, k) = dims2(a, "gemm_nt")?;
    let (n, k2) = dims2(b, "gemm_nt")?;
    if k != k2 {
        return Err(shape_err("gemm_nt", format!("inner dimensions {k} and {k2} differ")));
    }
    Ok(Tensor::from_parts(vec![m, n], matmul_bt(a.data(), b.data(), m, k, n, order), Precision::Fp32))
}

/// `a[K×M]ᵀ · b[K×N]`.
pub fn gemm_tn(a: &Tensor, b: &Tensor, order: GemmAccumOrder) -> Result<Tensor, KernelError> {
    let (k, m) = dims2(a, "gemm_tn")?;
    let (k2, n) = dims2(b, "gemm_tn")?;
    if k != k2 {
        return Err(shape_err("gemm_tn", format!("inner dimensions {k} and {k2} differ")));
    }
    let at = transpose_raw(a.data(), k, m);
    let bt = transpose_raw(b.data(), k, n);
    Ok(Tensor::from_parts(vec![m, n], matmul_bt(&at, &bt, m, k, n, order), Precision::Fp32))
}

/// Adds an FP32 bias along the last axis.
pub fn bias_add(c: &Tensor, bias: &Tensor) -> Result<Tensor, KernelError> {
    let width = *c.shape().last().unwrap_or(&1);
    if bias.len() != width {
        return Err(shape_err("bias_add", format!("bias of {} for last extent {width}", bias.len())));
    }
    let b = bias.data();
    let data = c.data().iter().enumerate().map(|(i, &x)| x + b[i % width]).collect();
    Ok(Tensor::from_parts(c.shape().to_vec(), data, Precision::Fp32))
}

/// Adds a per-channel FP32 bias to an `[N, C, ...]` tensor.
pub fn bias_add_channels(c: &Tensor, bias: &Tensor) -> Result<Tensor, KernelError> {
    let channels = *c.shape().get(1).ok_or_else(|| shape_err("bias_add_channels", "rank < 2"))?;
    if bias.len() != channels {
        return Err(shape_err("bias_add_channels", format!("bias of {} for {channels} channels", bias.len())));
    }
    let inner: usize = c.shape()[2..].iter().product();
    let b = bias.data();
    let data = c.data().iter().enumerate().map(|(i, &x)| x + b[(i / inner) % channels]).collect();
    Ok(Tensor::from_parts(c.shape().to_vec(), data, Precision::Fp32))
}

/// Gradient of [`bias_add`]: sums over every leading index, in order.
pub fn bias_grad(dy: &Tensor) -> Tensor {
    let width = *dy.shape().last().unwrap_or(&1);
    let mut out = vec![0.0f32; width];
    for row in dy.data().chunks_exact(width) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
    Tensor::from_parts(vec![width], out, Precision::Fp32)
}

/// Gradient of [`bias_add_channels`].
pub fn bias_grad_channels(dy: &Tensor) -> Tensor {
    let channels = dy.shape()[1];
    let inner: usize = dy.shape()[2..].iter().product();
    let mut out = vec![0.0f32; channels];
    for (i, &g) in dy.data().iter().enumerate() {
        out[(i / inner) % channels] += g;
    }
    Tensor::from_parts(vec![channels], out, Precision::Fp32)
}
