//! Host-side tooling for the filters in `dlf-core`: TOML scenario files,
//! CSV and manifest outputs, parallel sweeps and the oracle checks behind
//! `dlf check`.

pub mod check;
pub mod config;
pub mod error;
pub mod output;
pub mod sweep;

pub use error::{HarnessError, Result};
