//! 3-D reconstruction of light-field microscopy stacks by Richardson–Lucy
//! deconvolution, with automatic iteration selection.
//!
//! The forward model is a shift-variant convolution: each of the `Nnum²`
//! sub-pixel phases under a microlens has its own depth-dependent kernel
//! ([`lfmodel`]). Reconstruction runs multiplicative Richardson–Lucy updates
//! ([`deconv`]) and scores every intermediate volume with a band-limited DCT
//! entropy ([`metric`], [`optics`]) to pick the iteration where detail has
//! emerged but noise amplification has not yet taken over. Work is split
//! across workers by z-layer ([`pipeline`]) with a fixed-point reduction that
//! keeps results bit-identical for any worker count.

pub mod deconv;
pub mod error;
pub mod io;
pub mod lfmodel;
pub mod metric;
pub mod optics;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result};
