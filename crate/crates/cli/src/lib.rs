//! Command-line front end for `nilflow`: experiments, certificates and
//! seeded sweeps, with a stable exit-code contract.
//!
//! | exit | meaning |
//! |------|---------|
//! | 0 | every requested check passed |
//! | 1 | a check failed |
//! | 2 | configuration or input error |
//! | 3 | numerical failure |

pub mod commands;
pub mod error;
pub mod experiment;
pub mod source;
pub mod sweep;

pub use error::{CliError, CliResult};
