use std::fmt;

use super::{quantize_tensor_with, Tensor};
use crate::numerics::{FormatSpec, Precision, RoundingMode, SubnormalPolicy};

/// Layer families that carry their own quantization rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerClass {
    InnerProduct,
    Convolution,
    BatchNorm,
    Activation,
    Pooling,
    Dropout,
    EltWise,
    Lstm,
}

impl LayerClass {
    pub const ALL: [LayerClass; 8] = [
        LayerClass::InnerProduct,
        LayerClass::Convolution,
        LayerClass::BatchNorm,
        LayerClass::Activation,
        LayerClass::Pooling,
        LayerClass::Dropout,
        LayerClass::EltWise,
        LayerClass::Lstm,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerClass::InnerProduct => "inner_product",
            LayerClass::Convolution => "convolution",
            LayerClass::BatchNorm => "batchnorm",
            LayerClass::Activation => "activation",
            LayerClass::Pooling => "pooling",
            LayerClass::Dropout => "dropout",
            LayerClass::EltWise => "eltwise",
            LayerClass::Lstm => "lstm",
        }
    }
}

impl fmt::Display for LayerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LayerClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        LayerClass::ALL
            .into_iter()
            .find(|c| c.name() == s || (s == "gemm" && *c == LayerClass::InnerProduct))
            .ok_or_else(|| format!("unknown layer class `{s}`"))
    }
}

/// Which tensors of a layer pass through the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerQuant {
    pub weights: bool,
    /// Input activations (and, for GEMM-type layers, their outputs).
    pub activations: bool,
    /// Error gradients arriving from the next layer.
    pub error_grads: bool,
}

impl LayerQuant {
    pub const ALL: LayerQuant = LayerQuant { weights: true, activations: true, error_grads: true };
    pub const NONE: LayerQuant = LayerQuant { weights: false, activations: false, error_grads: false };
}

/// Per-layer-class quantization rules plus the global target format.
///
/// With precision FP32 every rule is ignored and quantization is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantPolicy {
    pub precision: Precision,
    pub rounding: RoundingMode,
    pub subnormals: SubnormalPolicy,
    rules: [LayerQuant; 8],
}

impl QuantPolicy {
    /// Default placement: everything quantized except batch-norm, which only
    /// quantizes its input activations.
    pub fn new(precision: Precision, rounding: RoundingMode) -> Self {
        let mut rules = [LayerQuant::ALL; 8];
        rules[LayerClass::BatchNorm.index()] = LayerQuant { weights: false, activations: true, error_grads: false };
        QuantPolicy { precision, rounding, subnormals: precision.format().subnormal_policy(), rules }
    }

    pub fn fp32() -> Self {
        Self::new(Precision::Fp32, RoundingMode::NearestEven)
    }

    pub fn bf16(rounding: RoundingMode) -> Self {
        Self::new(Precision::Bf16, rounding)
    }

    pub fn fp16(rounding: RoundingMode) -> Self {
        Self::new(Precision::Fp16, rounding)
    }

    pub fn rule(&self, class: LayerClass) -> LayerQuant {
        if self.is_identity() {
            return LayerQuant::NONE;
        }
        self.rules[class.index()]
    }

    pub fn set_rule(&mut self, class: LayerClass, rule: LayerQuant) {
        self.rules[class.index()] = rule;
    }

    pub fn rule_mut(&mut self, class: LayerClass) -> &mut LayerQuant {
        &mut self.rules[class.index()]
    }

    pub fn is_identity(&self) -> bool {
        self.precision == Precision::Fp32
    }

    pub fn format(&self) -> FormatSpec {
        self.precision.format().with_subnormal_policy(self.subnormals)
    }

    /// Unconditional projection onto the policy format.
    pub fn quantize(&self, t: &Tensor) -> Tensor {
        quantize_tensor_with(t, self.format(), self.rounding)
    }

    /// Projection when `enabled`; otherwise a copy.
    pub fn quantize_if(&self, enabled: bool, t: &Tensor) -> Tensor {
        if enabled && !self.is_identity() {
            self.quantize(t)
        } else {
            t.clone()
        }
    }
}

impl QuantPolicy {
    /// Projects an error-gradient tensor when `enabled`, counting the nonzero
    /// elements that the projection flushes to zero.
    pub fn quantize_grad(&self, enabled: bool, t: &Tensor) -> (Tensor, UnderflowStats) {
        if !enabled || self.is_identity() {
            return (t.clone(), UnderflowStats::default());
        }
        let q = self.quantize(t);
        let mut stats = UnderflowStats::default();
        for (&before, &after) in t.data().iter().zip(q.data()) {
            if before != 0.0 {
                stats.nonzero += 1;
                if after == 0.0 {
                    stats.flushed += 1;
                }
            }
        }
        (q, stats)
    }
}

/// Counts of error-gradient elements entering the quantizer as nonzero, and
/// of those leaving it as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UnderflowStats {
    pub nonzero: u64,
    pub flushed: u64,
}

impl UnderflowStats {
    pub fn merge(&mut self, other: UnderflowStats) {
        self.nonzero += other.nonzero;
        self.flushed += other.flushed;
    }

    /// Share of nonzero elements flushed; zero when nothing was counted.
    pub fn fraction(&self) -> f64 {
        if self.nonzero == 0 {
            0.0
        } else {
            self.flushed as f64 / self.nonzero as f64
        }
    }
}

impl Default for QuantPolicy {
    fn default() -> Self {
        Self::fp32()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fp32_policy_is_identity() {
        let p = QuantPolicy::fp32();
        for class in LayerClass::ALL {
            assert_eq!(p.rule(class), LayerQuant::NONE);
        }
        let t = Tensor::new(vec![1], vec![0.1]).unwrap();
        assert!(p.quantize_if(true, &t).bit_eq(&t));
    }

    #[test]
    fn batchnorm_only_quantizes_inputs() {
        let p = QuantPolicy::bf16(RoundingMode::NearestEven);
        let bn = p.rule(LayerClass::BatchNorm);
        assert!(bn.activations && !bn.weights && !bn.error_grads);
        assert_eq!(p.rule(LayerClass::Convolution), LayerQuant::ALL);
        assert_eq!(p.subnormals, SubnormalPolicy::FlushToZero);
        assert_eq!(QuantPolicy::fp16(RoundingMode::NearestEven).subnormals, SubnormalPolicy::Supported);
    }

    #[test]
    fn underflow_counting() {
        let t = Tensor::new(vec![4], vec![1e-10, 0.0, 1.0, -1e-12]).unwrap();
        let (q, stats) = QuantPolicy::fp16(RoundingMode::NearestEven).quantize_grad(true, &t);
        assert_eq!(q.data(), &[0.0, 0.0, 1.0, -0.0]);
        assert_eq!(stats, UnderflowStats { nonzero: 3, flushed: 2 });
        assert!((stats.fraction() - 2.0 / 3.0).abs() < 1e-12);
        let (_, stats) = QuantPolicy::bf16(RoundingMode::NearestEven).quantize_grad(true, &t);
        assert_eq!(stats.flushed, 0);
        let (_, stats) = QuantPolicy::fp32().quantize_grad(true, &t);
        assert_eq!(stats, UnderflowStats::default());
    }

    #[test]
    fn class_names_parse() {
        for c in LayerClass::ALL {
            assert_eq!(c.name().parse::<LayerClass>().unwrap(), c);
        }
        assert_eq!("gemm".parse::<LayerClass>().unwrap(), LayerClass::InnerProduct);
    }
}
