//! Core building blocks for a depth-from-focus pipeline on 4D light fields:
//! camera geometry, Fourier-domain refocusing, synthetic scene generation,
//! classical focus measures, an evaluation metric suite, and dataset I/O.

pub mod data_io;
pub mod dff;
pub mod error;
pub mod lightfield;
pub mod metrics;
pub mod refocus;
pub mod synthgen;

pub use error::{CoreError, Result};
