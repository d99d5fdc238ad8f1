//! Peak-based neural audio fingerprinting.
//!
//! Audio is reduced to sparse spectral peak clouds (one per overlapping one-second
//! segment), each cloud is embedded by a hierarchical point-set encoder trained with a
//! contrastive objective against time-stretched replicas, and queries are resolved by
//! inner-product search plus segment-sequence matching. A quad-hash peak baseline and an
//! evaluation harness are included.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod quadfp;
pub mod selftest;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
