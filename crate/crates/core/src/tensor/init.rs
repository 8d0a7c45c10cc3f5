use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{element_count, RngStream, Tensor, TensorError};
use crate::numerics::Precision;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Zeros,
    Uniform { low: f32, high: f32 },
    HeNormal { fan_in: usize },
    XavierUniform { fan_in: usize, fan_out: usize },
}

/// Deterministic FP32 initialization driven by `rng`.
pub fn init_tensor(shape: &[usize], scheme: InitScheme, rng: &mut RngStream) -> Result<Tensor, TensorError> {
    let n = element_count(shape)?;
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::Uniform { low, high } => {
            if !(low < high) || !low.is_finite() || !high.is_finite() {
                return Err(TensorError::InvalidInit(format!("uniform bounds [{low}, {high})")));
            }
            uniform(n, low, high, rng)
        }
        InitScheme::HeNormal { fan_in } => {
            if fan_in == 0 {
                return Err(TensorError::InvalidInit("he-normal fan_in must be positive".into()));
            }
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt())
                .map_err(|e| TensorError::InvalidInit(e.to_string()))?;
            (0..n).map(|_| normal.sample(rng)).collect()
        }
        InitScheme::XavierUniform { fan_in, fan_out } => {
            if fan_in == 0 || fan_out == 0 {
                return Err(TensorError::InvalidInit("xavier fans must be positive".into()));
            }
            let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
            uniform(n, -a, a, rng)
        }
    };
    Ok(Tensor::from_parts(shape.to_vec(), data, Precision::Fp32))
}

fn uniform(n: usize, low: f32, high: f32, rng: &mut RngStream) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(low..high)).collect()
}
