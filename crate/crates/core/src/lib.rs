//! Hybrid neural-network / Gaussian-process regression models.
//!
//! This crate composes three kinds of layers into one stack:
//!
//! - deterministic dense layers,
//! - variational dense layers with Gaussian weight posteriors, and
//! - sparse variational Gaussian-process layers over inducing points,
//!
//! trains the stack by gradient ascent on the appropriate objective
//! (mean squared error, negative log-likelihood, or the negative evidence
//! lower bound), and produces regression predictions with calibrated
//! uncertainty intervals.
//!
//! The supporting machinery (dense linear algebra, a define-by-run
//! reverse-mode tape, seeded sampling, and independent oracle
//! implementations used for verification) lives in the submodules.

pub mod autodiff;
pub mod error;
pub mod gp_layer;
pub mod kernels;
pub mod nn_layers;
pub mod numerics;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
