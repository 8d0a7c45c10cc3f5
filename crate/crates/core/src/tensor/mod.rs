//! Dense row-major tensors of `f32` values carrying a precision tag.
//!
//! A tensor tagged BF16 or FP16 still stores `f32` elements, but every element
//! is exactly representable in the tagged format. Kernels therefore run plain
//! `f32` arithmetic on 16-bit-exact inputs.

mod init;
mod io;
mod policy;
mod rng;

use thiserror::Error;

use crate::numerics::{quantize_scalar, FormatSpec, Precision, RoundingMode, SubnormalPolicy};

pub use init::{init_tensor, InitScheme};
pub use io::{dump_tensor, load_tensor, read_tensor, write_tensor, DumpError, DUMP_MAGIC, DUMP_VERSION};
pub use policy::{LayerClass, LayerQuant, QuantPolicy, UnderflowStats};
pub use rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("invalid shape {0:?}: extents must be positive")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("element {index} ({value:e}) is not representable as {tag}")]
    NotRepresentable { index: usize, value: f32, tag: Precision },
    #[error("invalid initializer: {0}")]
    InvalidInit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    tag: Precision,
}

fn element_count(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// Bitwise representability check, with all NaNs considered representable.
pub(crate) fn representable(x: f32, tag: Precision) -> bool {
    if x.is_nan() {
        return true;
    }
    let spec = tag.format().with_subnormal_policy(SubnormalPolicy::Supported);
    quantize_scalar(x, spec, RoundingMode::Truncate).to_bits() == x.to_bits()
}

impl Tensor {
    /// Builds an FP32 tensor.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::with_tag(shape, data, Precision::Fp32)
    }

    /// Builds a tensor with a claimed tag; every element must be exact in it.
    pub fn with_tag(shape: impl Into<Vec<usize>>, data: Vec<f32>, tag: Precision) -> Result<Self, TensorError> {
        let shape = shape.into();
        let n = element_count(&shape)?;
        if n != data.len() {
            return Err(TensorError::LengthMismatch { shape, len: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &x)| !representable(x, tag)) {
            return Err(TensorError::NotRepresentable { index, value, tag });
        }
        Ok(Tensor { shape, data, tag })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Result<Self, TensorError> {
        let shape = shape.into();
        let n = element_count(&shape)?;
        Ok(Tensor { shape, data: vec![value; n], tag: Precision::Fp32 })
    }

    /// Zero tensor shaped like `self`, tagged FP32.
    pub fn zeros_like(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: vec![0.0; self.data.len()], tag: Precision::Fp32 }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>, tag: Precision) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data, tag }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tag(&self) -> Precision {
        self.tag
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access; the tag falls back to FP32 since writes may break it.
    pub fn data_mut(&mut self) -> &mut [f32] {
        self.tag = Precision::Fp32;
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Copying reshape.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let n = element_count(&shape)?;
        if n != self.data.len() {
            return Err(TensorError::LengthMismatch { shape, len: self.data.len() });
        }
        Ok(Tensor { shape, data: self.data.clone(), tag: self.tag })
    }

    /// Verifies the tag invariant bit-exactly.
    pub fn check_tag(&self) -> Result<(), TensorError> {
        match self.data.iter().enumerate().find(|(_, &x)| !representable(x, self.tag)) {
            Some((index, &value)) => Err(TensorError::NotRepresentable { index, value, tag: self.tag }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect(), tag: Precision::Fp32 }
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<(), TensorError> {
        if self.shape != expected {
            return Err(TensorError::ShapeMismatch { expected: expected.to_vec(), found: self.shape.clone() });
        }
        Ok(())
    }

    /// Bitwise equality of shape, tag and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.tag == other.tag
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor { shape, data: self.data[start * row..end * row].to_vec(), tag: self.tag }
    }

    /// Gathers rows along the first axis.
    pub fn gather_rows(&self, rows: &[usize]) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            data.extend_from_slice(&self.data[r * row..(r + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor { shape, data, tag: self.tag }
    }
}

/// Elementwise projection onto `target` with its default format.
pub fn quantize_tensor(t: &Tensor, target: Precision, mode: RoundingMode) -> Tensor {
    quantize_tensor_with(t, target.format(), mode)
}

/// Elementwise projection onto an explicit format.
pub fn quantize_tensor_with(t: &Tensor, spec: FormatSpec, mode: RoundingMode) -> Tensor {
    let data = if spec.precision() == Precision::Fp32 {
        t.data.clone()
    } else {
        t.data.iter().map(|&x| quantize_scalar(x, spec, mode)).collect()
    };
    Tensor { shape: t.shape.clone(), data, tag: spec.precision() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// FP32 elementwise arithmetic on equally shaped tensors.
pub fn elementwise_binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    b.expect_shape(&a.shape)?;
    let f = match op {
        BinaryOp::Add => |x: f32, y: f32| x + y,
        BinaryOp::Sub => |x: f32, y: f32| x - y,
        BinaryOp::Mul => |x: f32, y: f32| x * y,
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor { shape: a.shape.clone(), data, tag: Precision::Fp32 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert_eq!(Tensor::new(vec![2, 0], vec![]), Err(TensorError::InvalidShape(vec![2, 0])));
        let err = Tensor::with_tag(vec![1], vec![std::f32::consts::PI], Precision::Bf16).unwrap_err();
        assert!(matches!(err, TensorError::NotRepresentable { index: 0, .. }));
        assert!(Tensor::with_tag(vec![2], vec![3.140625, f32::NAN], Precision::Bf16).is_ok());
    }

    #[test]
    fn quantize_examples() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, -0.5]).unwrap();
        let q = quantize_tensor(&t, Precision::Bf16, RoundingMode::NearestEven);
        assert_eq!(q.data(), t.data());
        assert_eq!(q.tag(), Precision::Bf16);

        let t = Tensor::new(vec![1], vec![std::f32::consts::PI]).unwrap();
        assert_eq!(quantize_tensor(&t, Precision::Bf16, RoundingMode::NearestEven).data(), &[3.140625]);

        let t = Tensor::new(vec![1], vec![1e-20]).unwrap();
        assert_eq!(quantize_tensor(&t, Precision::Fp16, RoundingMode::NearestEven).data(), &[0.0]);
    }

    #[test]
    fn quantize_is_a_projection() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -7.3e-12, 1e30, 65519.0, f32::INFINITY, 3.3e-39]).unwrap();
        for tag in [Precision::Bf16, Precision::Fp16, Precision::Fp32] {
            for mode in [RoundingMode::NearestEven, RoundingMode::Truncate] {
                let once = quantize_tensor(&t, tag, mode);
                once.check_tag().unwrap();
                assert!(quantize_tensor(&once, tag, mode).bit_eq(&once));
                assert_eq!(once.shape(), t.shape());
            }
        }
    }

    #[test]
    fn elementwise() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(elementwise_binary(BinaryOp::Add, &a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(elementwise_binary(BinaryOp::Sub, &a, &b).unwrap().data(), &[-2.0, -2.0]);
        let z = a.zeros_like();
        assert_eq!(elementwise_binary(BinaryOp::Mul, &a, &z).unwrap().data(), &[0.0, 0.0]);
        let c = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert!(elementwise_binary(BinaryOp::Add, &a, &c).is_err());

        let big = Tensor::with_tag(vec![1], vec![1048576.0], Precision::Bf16).unwrap();
        let one = Tensor::with_tag(vec![1], vec![1.0], Precision::Bf16).unwrap();
        let sum = elementwise_binary(BinaryOp::Add, &big, &one).unwrap();
        assert_eq!(sum.data(), &[1048577.0]);
        assert_eq!(sum.tag(), Precision::Fp32);
    }

    #[test]
    fn mutation_drops_tag() {
        let mut t = Tensor::with_tag(vec![1], vec![1.0], Precision::Bf16).unwrap();
        t.data_mut()[0] = 0.1;
        assert_eq!(t.tag(), Precision::Fp32);
    }
}
