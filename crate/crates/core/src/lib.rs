//! Local Wasserstein regression over empirical point-cloud measures.
//!
//! The crate is `no_std` compatible (it needs `alloc`). Disable the default
//! `std` feature to build without the standard library; math then routes
//! through `libm`.
//!
//! Layout:
//! - [`measures`]: weighted point clouds and regression datasets.
//! - [`ot`]: debiased Sinkhorn divergence with unrolled gradients, exact
//!   W2 oracles (assignment and transport LP), free-support barycenters.
//! - [`kernel`]: kernels on W2 distances and the k-NN bandwidth rule.
//! - [`maps`]: affine and DeepSets displacement transport maps.
//! - [`train`]: kernel-weighted fitting with Adam, prediction routing.
//! - [`datagen`]: the Gaussian and Gaussian-mixture pair generators.
//! - [`eval`]: R²_W, absolute test error and the regime harness.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod maps;
pub mod math;
pub mod matrix;
pub mod measures;
pub mod ot;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use measures::{EmpiricalMeasure, PairId, RegressionDataset};
