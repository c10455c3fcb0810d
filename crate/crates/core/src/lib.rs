//! Functional maximal correlation analysis: two networks trained to maximise
//! the log-determinant dependence between their outputs, plus the tooling to
//! read an eigenspectrum off the trained pair and compare it with ground truth.

pub mod datagen;
pub mod error;
pub mod fmca;
pub mod linalg;
pub mod netfn;
pub mod oracle;
pub mod spectrum;
pub mod textio;

pub use error::{FmcaError, Result};
