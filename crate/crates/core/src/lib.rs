//! YotoR: a Swin Transformer backbone fused to a YoloR neck and detection head.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation, finite-difference
//!   checking and the weight container format.
//! - [`nn`]: parameterized layers and the [`nn::Module`] traversal trait.
//! - [`swin`]: patch embedding, (shifted-)window attention, patch merging and the
//!   four-stage backbone.
//! - [`neck`]: CSP blocks, the PAN neck, implicit-knowledge parameters, anchors
//!   and detection heads.
//! - [`model`]: variant names (`TP4`, `TP5`, `BP4`, `BB4`), the adapter between
//!   token grids and feature maps, model assembly and cost accounting.
//! - [`detect`]: letterboxing, box decoding, NMS and COCO result records.
//! - [`eval`]: COCO-style AP/AR evaluation.
//! - [`train`]: target assignment, the composite detection loss and an SGD loop.
//! - [`bench`]: the timing protocol and speed/accuracy scatter output.
//! - [`cli`]: the `yotor` command line.
//!
//! See the `examples/` directory of this crate for one runnable program per capability.

pub mod bench;
pub mod cli;
pub mod detect;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod hooks;
pub mod model;
pub mod neck;
pub mod nn;
pub mod swin;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{no_grad, DType, Element, Gradients, Tensor};
