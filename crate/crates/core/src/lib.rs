//! Continuous matrix product state (cMPS) tomography for Markovian open
//! quantum systems monitored by a counting detector.
//!
//! Units are kHz for rates and ms for times throughout.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ensemble;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod lindblad;
pub mod lm;
pub mod qd;
pub mod quadrature;
pub mod spectral;
pub mod stats;
pub mod tomography;
pub mod trajectory;

pub use error::{Error, Result};
