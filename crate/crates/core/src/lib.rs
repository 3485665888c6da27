//! Spatially aware transformer joint detection and tracking at desk scale.
//!
//! The crate bundles a small reverse-mode tensor tape, the butterfly channel
//! fusion layer, a multi-scale transformer encoder whose feed-forward block is
//! replaced by butterfly + depthwise convolution, a toy pyramid backbone, a
//! query-based detector/tracker, a layer-wise params/MACs profiler, a CLEAR-MOT
//! evaluator and a synthetic sequence generator.

pub mod backbone;
pub mod butterfly;
pub mod encoder;
pub mod error;
pub mod io;
pub mod moteval;
pub mod profiler;
pub mod synth;
pub mod tensor;
pub mod tracker;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
