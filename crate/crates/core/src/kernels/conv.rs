use super::gemm::{gemm, gemm_nt, transpose, GemmAccumOrder};
use super::{shape_err, KernelError};
use crate::numerics::Precision;
use crate::tensor::Tensor;

/// 2-D convolution geometry (square stride and padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel_h: kernel, kernel_w: kernel, stride, padding }
    }

    /// Output spatial extents for an `h × w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), KernelError> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(KernelError::InvalidSpec { op: "conv2d", detail: format!("{self:?}") });
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(KernelError::InvalidSpec {
                op: "conv2d",
                detail: format!("kernel {}x{} larger than padded input {ph}x{pw}", self.kernel_h, self.kernel_w),
            });
        }
        Ok(((ph - self.kernel_h) / self.stride + 1, (pw - self.kernel_w) / self.stride + 1))
    }

    /// Rows of the unrolled patch matrix: `C · kh · kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }
}

fn input_dims(x: &Tensor, spec: &ConvSpec) -> Result<(usize, usize, usize), KernelError> {
    match *x.shape() {
        [n, c, h, w] if c == spec.in_channels => Ok((n, h, w)),
        _ => Err(shape_err("conv2d", format!("input {:?} for {} input channels", x.shape(), spec.in_channels))),
    }
}

/// Unrolls `x: [N, C, H, W]` into `[C·kh·kw, N·H'·W']`.
///
/// Column `n·H'W' + oy·W' + ox` holds the receptive field of output pixel
/// `(oy, ox)` of image `n`; padded positions hold zeros. The tag is kept.
pub fn im2col(x: &Tensor, spec: &ConvSpec) -> Result<Tensor, KernelError> {
    let (n, h, w) = input_dims(x, spec)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    let cols = n * oh * ow;
    let rows = spec.patch_len();
    let mut out = vec![0.0f32; rows * cols];
    let src = x.data();
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for img in 0..n {
                    let plane = &src[(img * spec.in_channels + c) * h * w..][..h * w];
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * spec.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dst[(img * oh + oy) * ow + ox] = plane[iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![rows, cols], out, x.tag()))
}

/// Folds a `[C·kh·kw, N·H'·W']` patch-gradient matrix back onto
/// `[N, C, H, W]`, summing overlapping contributions in row order.
pub fn col2im(cols: &Tensor, spec: &ConvSpec, n: usize, h: usize, w: usize) -> Result<Tensor, KernelError> {
    let (oh, ow) = spec.output_dims(h, w)?;
    let ncols = n * oh * ow;
    if cols.shape() != [spec.patch_len(), ncols] {
        return Err(shape_err("col2im", format!("{:?} for {} x {ncols}", cols.shape(), spec.patch_len())));
    }
    let mut out = vec![0.0f32; n * spec.in_channels * h * w];
    let src = cols.data();
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
                let line = &src[row * ncols..(row + 1) * ncols];
                for img in 0..n {
                    let plane = &mut out[(img * spec.in_channels + c) * h * w..][..h * w];
                    for oy in 0..oh {
                        let iy = (oy * spec.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * spec.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            plane[iy as usize * w + ix as usize] += line[(img * oh + oy) * ow + ox];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, spec.in_channels, h, w], out, Precision::Fp32))
}

fn check_weight(wt: &Tensor, spec: &ConvSpec) -> Result<(), KernelError> {
    if wt.shape() != spec.weight_shape() {
        return Err(shape_err("conv2d", format!("weight {:?}, expected {:?}", wt.shape(), spec.weight_shape())));
    }
    Ok(())
}

/// `[F, N·P]` → `[N, F, P]`
fn channels_first(data: &[f32], f: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for ch in 0..f {
        for img in 0..n {
            out[(img * f + ch) * p..][..p].copy_from_slice(&data[ch * n * p + img * p..][..p]);
        }
    }
    out
}

/// `[N, F, P]` → `[F, N·P]`
fn batch_first(data: &[f32], f: usize, n: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for img in 0..n {
        for ch in 0..f {
            out[ch * n * p + img * p..][..p].copy_from_slice(&data[(img * f + ch) * p..][..p]);
        }
    }
    out
}

/// Convolution as `W[F, C·kh·kw] · im2col(x)`, returning `[N, F, H', W']` FP32.
/// Bias is not applied here.
pub fn conv2d_forward(x: &Tensor, wt: &Tensor, spec: &ConvSpec, order: GemmAccumOrder) -> Result<Tensor, KernelError> {
    check_weight(wt, spec)?;
    let (n, h, w) = input_dims(x, spec)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    let cols = im2col(x, spec)?;
    let wmat = wt.reshape(vec![spec.out_channels, spec.patch_len()])?;
    let out = gemm(&wmat, &cols, order)?;
    let data = channels_first(out.data(), spec.out_channels, n, oh * ow);
    Ok(Tensor::from_parts(vec![n, spec.out_channels, oh, ow], data, Precision::Fp32))
}

/// Returns `(dx, dw)` in FP32. `dw` reduces over every image and output
/// position in a single ordered sum.
pub fn conv2d_backward(
    x: &Tensor,
    wt: &Tensor,
    dy: &Tensor,
    spec: &ConvSpec,
    order: GemmAccumOrder,
) -> Result<(Tensor, Tensor), KernelError> {
    check_weight(wt, spec)?;
    let (n, h, w) = input_dims(x, spec)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    dy.expect_shape(&[n, spec.out_channels, oh, ow])?;
    let p = oh * ow;
    let dy_mat = Tensor::from_parts(
        vec![spec.out_channels, n * p],
        batch_first(dy.data(), spec.out_channels, n, p),
        dy.tag(),
    );
    let cols = im2col(x, spec)?;
    let dw = gemm_nt(&dy_mat, &cols, order)?.reshape(spec.weight_shape().to_vec())?;
    let wmat = wt.reshape(vec![spec.out_channels, spec.patch_len()])?;
    let dcols = gemm(&transpose(&wmat)?, &dy_mat, order)?;
    let dx = col2im(&dcols, spec, n, h, w)?;
    Ok((dx, dw))
}
