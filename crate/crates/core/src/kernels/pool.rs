use super::{shape_err, KernelError};
use crate::numerics::Precision;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Square window without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), KernelError> {
        if self.window == 0 || self.stride == 0 || self.window > h || self.window > w {
            return Err(KernelError::InvalidSpec { op: "pool", detail: format!("{self:?} on {h}x{w}") });
        }
        Ok(((h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1))
    }
}

/// Saved state for [`pool_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    pub kind: PoolKind,
    pub spec: PoolSpec,
    pub input_shape: Vec<usize>,
    /// Flat input index of each output's winner (max pooling only).
    pub argmax: Option<Vec<usize>>,
}

/// Pools `x: [N, C, H, W]`. Max-pool ties go to the first element in
/// row-major window order.
pub fn pool_forward(kind: PoolKind, x: &Tensor, spec: PoolSpec) -> Result<(Tensor, PoolCache), KernelError> {
    let [n, c, h, w] = *x.shape() else {
        return Err(shape_err("pool", format!("expected [N, C, H, W], got {:?}", x.shape())));
    };
    let (oh, ow) = spec.output_dims(h, w)?;
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::new();
    let area = (spec.window * spec.window) as f32;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * spec.stride, ox * spec.stride);
                let window = (y0..y0 + spec.window).flat_map(|iy| (x0..x0 + spec.window).map(move |ix| base + iy * w + ix));
                match kind {
                    PoolKind::Max => {
                        let mut best = usize::MAX;
                        for i in window {
                            if best == usize::MAX || src[i] > src[best] {
                                best = i;
                            }
                        }
                        out.push(src[best]);
                        argmax.push(best);
                    }
                    PoolKind::Avg => {
                        let mut sum = 0.0f32;
                        for i in window {
                            sum += src[i];
                        }
                        out.push(sum / area);
                    }
                }
            }
        }
    }
    let cache = PoolCache {
        kind,
        spec,
        input_shape: x.shape().to_vec(),
        argmax: (kind == PoolKind::Max).then_some(argmax),
    };
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out, Precision::Fp32), cache))
}

pub fn pool_backward(dy: &Tensor, cache: &PoolCache) -> Result<Tensor, KernelError> {
    let [n, c, h, w] = cache.input_shape[..] else {
        return Err(shape_err("pool_backward", "cached input is not 4-D"));
    };
    let (oh, ow) = cache.spec.output_dims(h, w)?;
    dy.expect_shape(&[n, c, oh, ow])?;
    let mut dx = vec![0.0f32; n * c * h * w];
    let g = dy.data();
    match (cache.kind, &cache.argmax) {
        (PoolKind::Max, Some(argmax)) => {
            for (&i, &v) in argmax.iter().zip(g) {
                dx[i] += v;
            }
        }
        (PoolKind::Max, None) => return Err(shape_err("pool_backward", "max pooling cache without indices")),
        (PoolKind::Avg, _) => {
            let area = (cache.spec.window * cache.spec.window) as f32;
            let s = cache.spec.stride;
            for plane in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let share = g[(plane * oh + oy) * ow + ox] / area;
                        for iy in oy * s..oy * s + cache.spec.window {
                            for ix in ox * s..ox * s + cache.spec.window {
                                dx[plane * h * w + iy * w + ix] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(cache.input_shape.clone(), dx, Precision::Fp32))
}
