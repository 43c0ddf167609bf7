//! Neural algorithmic reasoning on step-annotated algorithm traces.
//!
//! * [`traces`] generates execution traces and their oracles;
//! * [`model`] is the encoder-processor-decoder network with baseline,
//!   forget and gated history modes;
//! * [`objective`] holds the losses, λ calibration and training loops;
//! * [`eval`] scores models and extracts telemetry curves;
//! * [`dataset`] and [`checkpoint`] are the on-disk formats.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod traces;

pub use error::{Error, Result};
