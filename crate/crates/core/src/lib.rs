//! Gaussian belief propagation on Forney-style factor graphs, computed either
//! analytically or by networks of leaky integrate-and-fire neurons operating
//! on population rate codes.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coding;
pub mod config;
pub mod error;
pub mod ffg;
pub mod gaussian;
pub mod lif;
pub mod nodes;
pub mod plasticity;

pub use error::{Error, Result};
pub use gaussian::GaussianMessage;
