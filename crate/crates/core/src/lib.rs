//! Variational Bayesian image decomposition and segmentation.
//!
//! An observed image `y` is split into a contour `x` and a basis with mean `m`
//! and precision `ρ`. The contour carries a SAR prior weighted by a line field
//! `υ`, and a K-channel label field `z` carries a second SAR prior weighted by
//! boundary fields `ω` and class probabilities `π`. Gamma and Beta factors are
//! refreshed with closed-form conjugate updates; Gaussian factors are fitted
//! by reparameterised gradient descent on the variational loss, optionally
//! combined with a cross-entropy against manual labels.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod distributions;
pub mod error;
pub mod exec;
pub mod grid;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod var_loss;
pub mod vb_updates;

pub use error::{Error, Result};
