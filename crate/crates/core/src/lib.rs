//! Two-zone segmentation with U-Net and squeeze-and-excitation variants.
//!
//! The crate covers the whole pipeline: a small reverse-mode engine
//! ([`tape`]), the three architectures ([`architectures`]), Dice-loss
//! training with momentum SGD ([`training`]), synthetic multi-institution
//! phantoms and a PNG dataset layout ([`dataset`]), morphological cleanup
//! ([`postprocess`]), overlap and boundary metrics ([`metrics`]), the
//! cross-dataset condition matrix ([`experiments`]) and Friedman /
//! Bonferroni-Dunn comparison ([`stats`]).
//!
//! Runnable walkthroughs live in `examples/`; the `zonalseg` binary exposes
//! the same capabilities as subcommands.

pub mod architectures;
pub mod array;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod metrics;
pub mod postprocess;
pub mod raster;
pub mod stats;
pub mod tape;
pub mod training;

pub use array::{DenseArray, Padding};
pub use error::{Error, Result};
pub use postprocess::BinaryMask;
pub use raster::Raster;
pub use tape::{Tape, Var};
