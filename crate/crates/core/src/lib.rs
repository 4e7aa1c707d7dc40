//! Characterization toolkit for superconducting microwave resonators.
//!
//! The crate turns VNA transmission traces into quality factors and TLS
//! loss parameters: trace ingest (`trace_io`), baseline handling and
//! resonance detection (`baseline`), diameter-corrected circle fits
//! (`circlefit`), photon-number bookkeeping (`photon`), power-sweep S-curve
//! fits (`scurve`), design formulas (`designcalc`), a forward-model
//! generator (`synth`) and ensemble reporting (`report`).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod circlefit;
pub mod designcalc;
pub mod error;
pub mod lm;
pub mod par;
pub mod photon;
pub mod report;
pub mod scurve;
pub mod synth;
pub mod trace_io;
pub mod units;

pub use error::{Error, Result};
pub use par::Execution;
