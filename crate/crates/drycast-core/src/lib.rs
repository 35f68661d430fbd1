//! Core numerics for drycast: a tape-based reverse-mode autodiff engine over
//! dense f64 tensors, the network layers and fusion model built on it, a
//! synthetic drying-process simulator, and the data pipeline plus training
//! math used by the experiment harness.
//!
//! The crate is `no_std`-compatible (with `alloc`); everything here is pure
//! computation. File formats, timing, and the CLI live in the `drycast` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod fmath;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
