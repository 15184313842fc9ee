//! Audio-visual deepfake detection from phoneme-aligned lip geometry, mouth
//! crops and identity dynamics.
//!
//! The guide in `book/` walks through each stage; its snippets run as
//! doctests of this crate.

pub mod alignment;
pub mod error;
pub mod extractors;
pub mod geometry;
pub mod harness;
pub mod identity;
pub mod losses;
pub mod model;
pub mod plot;
pub mod scalar;
pub mod synthgen;

pub use error::{PiaError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/drift.md")]
    mod drift {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/synthgen.md")]
    mod synthgen {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
