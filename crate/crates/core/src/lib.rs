//! Uncertainty-weighted multi-loss training for box-prompted binary
//! segmentation.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`diff`]), the segmentation loss family ([`losses`]), the learnable
//! per-loss noise weighting ([`uncertainty`]), optimizers including
//! sharpness-aware minimization ([`optim`]), exact DSC/NSD evaluation
//! ([`metrics`]), a tiny convolutional model with logit distillation
//! ([`model`]), seeded synthetic data ([`data`]) and the training and
//! ablation driver ([`harness`]).

// NaN must fail range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diff;
pub mod edt;
pub mod error;
pub mod grid;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod uncertainty;

pub use error::{Error, Result};
pub use grid::Grid;
