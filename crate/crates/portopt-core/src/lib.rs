//! Differentiable portfolio optimization over simplex-constrained weights.
//!
//! The crate is organized around a small reverse-mode autodiff tape
//! ([`tape`]) on which portfolio objectives and penalty constraints
//! ([`finance`]) are expressed as graphs over the pre-weight vector. A
//! simplex projection ([`projection`]) maps unconstrained pre-weights to
//! long-only, fully-invested weights, and the training engine ([`engine`])
//! runs gradient descent (plain or Adam) on the composite loss. Slow but
//! independent ground-truth routines live in [`oracle`]; return panels and
//! a seeded synthetic market generator live in [`panel`].
//!
//! The crate is `no_std`-compatible (requires `alloc`); file ingestion,
//! scenario files, and the CLI live in the companion `portopt` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod engine;
pub mod finance;
pub mod matrix;
pub mod optim;
pub mod oracle;
pub mod panel;
pub mod projection;
pub mod tape;

pub use matrix::Matrix;
pub use projection::{PreWeights, WeightVector};
