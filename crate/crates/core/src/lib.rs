//! Vanilla and Wormhole MAML built on a small reverse-mode autodiff engine
//! whose backward pass is itself differentiable.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: tensors, the tape, and gradient / gradient-check routines.
//! - [`models`]: parameter sets, functional forward passes and losses.
//! - [`wormhole`]: the multiplicative inner-loop parameter and inner adaptation.
//! - [`tasks`]: episode samplers and MNIST IDX ingestion.
//! - [`meta_trainer`]: the outer loop, optimizers and evaluation.
//! - [`analysis`]: fixed-point analysis of the multiplier and gradient-conflict diagnostics.
//! - [`exec`]: data-parallel execution with a sequential fallback.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod exec;
pub mod meta_trainer;
pub mod models;
pub mod tasks;
pub mod wormhole;

pub use error::{Error, Result};
