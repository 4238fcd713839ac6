//! Twin data-assimilation experiments on SQG turbulence.
//!
//! The crate couples a pseudo-spectral SQG model ([`sqg`]) with two
//! ensemble filters: a training-free ensemble score filter ([`ensf`]) and a
//! localized ETKF baseline ([`letkf`]). [`osse`] drives nature runs,
//! synthetic observations and cycling; [`budget`] holds the compute-budget
//! estimators for transformer surrogates.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod config;
pub mod ensf;
pub mod error;
pub mod forecast;
pub mod letkf;
pub mod observation;
pub mod osse;
pub mod rng;
pub mod sqg;

pub use error::{Error, Result};
