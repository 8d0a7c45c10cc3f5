// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod harness;
pub mod kernels;
pub mod netgraph;
pub mod numerics;
pub mod optim;
pub mod tensor;
