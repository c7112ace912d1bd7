//! Three-stage cascaded Deep Layer Aggregation segmentation.
//!
//! The crate carries its own small reverse-mode autograd engine
//! ([`autograd`]), the layer set the network needs ([`nn`]), the cascade
//! itself ([`model`]), training ([`train`]), whole-volume prediction with
//! ensembling and cluster filtering ([`infer`]), Dice/HD95 scoring
//! ([`eval`]) and the volume file format plus a synthetic phantom generator
//! ([`data`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod data;
pub mod model;
pub mod nn;
pub mod error;
pub mod eval;
pub mod infer;
pub mod real;
pub mod train;

pub use autograd::{no_grad, Tensor};
pub use error::{Error, Result};
pub use real::{DType, Real};

/// Seeded generator threaded through every stochastic operation.
pub type Rng = rand_chacha::ChaCha8Rng;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/autograd.md")]
    struct Autograd;
    #[doc = include_str!("../../../book/src/layers.md")]
    struct Layers;
    #[doc = include_str!("../../../book/src/cascade.md")]
    struct Cascade;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/inference.md")]
    struct Inference;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
}
