//! Two-stage multi-view head reconstruction.
//!
//! A coarse stage samples per-view image features into a volume covering the
//! capture space, localizes the head with a spatial transformer, and decodes
//! every template vertex from a probability volume. A refinement stage then
//! resamples features in a small grid around each coarse vertex, weighting
//! views by visibility and surface orientation, and decodes a corrected
//! position. Training is supervised by raw scans through a robust
//! point-to-surface loss plus edge regularization.

// `!(x > 0.0)` style checks deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod camera;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod geom;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
