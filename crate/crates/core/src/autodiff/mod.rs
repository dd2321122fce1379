//! Minimal reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records each operator together with a backward rule. Operators
//! are coarse (a whole convolution, a whole softmax volume), so the tape stays
//! short and the per-node overhead is negligible next to the kernels.

pub mod checkpoint;
pub mod conv;
pub mod gemm;
pub mod ops;
pub mod params;
pub mod sample;
pub mod tape;

pub use conv::{conv2d, conv3d};
pub use params::{Bound, ParamId, ParamStore, Parameter};
pub use sample::{bilinear_sample2d, reduce_mean_var};
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};
