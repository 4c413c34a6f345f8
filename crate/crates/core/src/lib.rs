//! Load-balanced 3-D tensor parallelism for Transformer linear algebra.
//!
//! `P = p³` logical ranks, arranged as a cube, run the balanced 3-D
//! matrix-matrix and matrix-vector products (forward and backward) over an
//! instrumented in-process collective layer. The products are assembled into
//! Transformer layers and checked against serial references and an analytic
//! cost model.
//!
//! The accompanying guide in `book/` walks through the algorithms; its code
//! listings are compiled and run as doc-tests of this crate.

pub mod comm;
pub mod error;
pub mod kernel;
pub mod nn;
pub mod ops3d;
pub mod scalar;
pub mod sharding;
pub mod topology;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};

// The guide's listings run as doc-tests of these empty modules.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/cube.md")]
    mod cube {}
    #[doc = include_str!("../../../book/src/layouts.md")]
    mod layouts {}
    #[doc = include_str!("../../../book/src/products.md")]
    mod products {}
    #[doc = include_str!("../../../book/src/transformer.md")]
    mod transformer {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
