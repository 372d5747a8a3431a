//! Circuit simulation with first-class memristive devices.
//!
//! The crate is organized bottom-up:
//!
//! - [`device`]: closed-form device equations (memristor, op-amp)
//! - [`netlist`]: SPICE-subset parser and subcircuit flattening
//! - [`circuit`]: the flat element graph
//! - [`engine`]: MNA assembly, Newton, DC operating point, transient, traces
//! - [`experiments`]: resistance-copying feedback circuits and their metrics

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod device;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod netlist;
