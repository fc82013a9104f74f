//! Hierarchical convolutional sparse coding.
//!
//! A signal `x_0` is explained by a recursion across layers,
//! `x_{l-1} = A_l * x_l + B_l * u_l`, where `x_l` is a dense, smooth *scale*
//! signal and `u_l` is a sparse *detail* signal. This crate provides:
//!
//! * [`tensor`] and [`conv`]: dense multi-channel tensors, full convolution,
//!   valid correlation, the filter-gradient correlation and soft-thresholding.
//! * [`model`]: the layered filter banks (optionally tied across layers),
//!   top-down synthesis and prior sampling.
//! * [`inference`]: per-layer FISTA/ISTA solvers for the scale/detail codes and
//!   sequential encoding of a whole hierarchy.
//! * [`learning`]: filter gradients, unit-norm atom projection and the
//!   alternating-minimization training loop.
//! * [`classifier`]: a multiclass logistic-regression head over the codes.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! The `parallel` feature encodes batches with rayon; results do not depend on
//! the number of threads.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod classifier;
pub mod conv;
mod error;
pub mod inference;
pub mod learning;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{FilterBank, Real, SignalTensor};
